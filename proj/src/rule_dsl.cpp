// Rule predicate language:
//   pred   := term ('OR' term)*
//   term   := factor ('AND' factor)*
//   factor := '(' pred ')' | stat op number
//   op     := < <= > >= = == !=
// Keywords are case-insensitive; && and || are accepted as synonyms.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "optbench/optimizer.hpp"

namespace optbench {

namespace {

class PredicateParser {
 public:
  explicit PredicateParser(std::string_view text) : s_(text) {}

  RulePredicate parse() {
    RulePredicate p = disjunction();
    skip_ws();
    if (pos_ != s_.size()) error("unexpected '" + std::string(s_.substr(pos_, 1)) + "'");
    return p;
  }

 private:
  [[noreturn]] void error(const std::string& what) const {
    fail(ErrorCode::ParseError, "rule predicate: " + what + " at offset " + std::to_string(pos_), std::to_string(pos_));
  }

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }

  bool keyword(std::string_view word, std::string_view symbol) {
    skip_ws();
    if (s_.substr(pos_, symbol.size()) == symbol) {
      pos_ += symbol.size();
      return true;
    }
    if (pos_ + word.size() > s_.size()) return false;
    for (std::size_t i = 0; i < word.size(); ++i)
      if (std::toupper(static_cast<unsigned char>(s_[pos_ + i])) != word[i]) return false;
    const std::size_t end = pos_ + word.size();
    if (end < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[end])) || s_[end] == '_')) return false;
    pos_ = end;
    return true;
  }

  RulePredicate combine(RulePredicate::Kind kind, std::vector<RulePredicate> ops) {
    if (ops.size() == 1) return std::move(ops.front());
    RulePredicate p;
    p.kind = kind;
    p.operands = std::move(ops);
    return p;
  }

  RulePredicate disjunction() {
    std::vector<RulePredicate> ops{conjunction()};
    while (keyword("OR", "||")) ops.push_back(conjunction());
    return combine(RulePredicate::Kind::Or, std::move(ops));
  }

  RulePredicate conjunction() {
    std::vector<RulePredicate> ops{factor()};
    while (keyword("AND", "&&")) ops.push_back(factor());
    return combine(RulePredicate::Kind::And, std::move(ops));
  }

  RulePredicate factor() {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == '(') {
      ++pos_;
      RulePredicate p = disjunction();
      skip_ws();
      if (pos_ >= s_.size() || s_[pos_] != ')') error("expected ')'");
      ++pos_;
      return p;
    }
    RulePredicate leaf;
    leaf.stat = identifier();
    leaf.op = comparator();
    leaf.value = number();
    return leaf;
  }

  std::string identifier() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    if (start == pos_) error("expected a statistic name");
    std::string name(s_.substr(start, pos_ - start));
    if (!is_statistic_name(name)) {
      pos_ = start;
      fail(ErrorCode::UnknownStatistic, "unknown statistic '" + name + "'", std::to_string(start));
    }
    return name;
  }

  CompareOp comparator() {
    skip_ws();
    auto take = [&](std::string_view sym) {
      if (s_.substr(pos_, sym.size()) != sym) return false;
      pos_ += sym.size();
      return true;
    };
    if (take("<=")) return CompareOp::Le;
    if (take(">=")) return CompareOp::Ge;
    if (take("!=")) return CompareOp::Ne;
    if (take("==")) return CompareOp::Eq;
    if (take("<")) return CompareOp::Lt;
    if (take(">")) return CompareOp::Gt;
    if (take("=")) return CompareOp::Eq;
    error("expected a comparison operator");
  }

  double number() {
    skip_ws();
    double v = 0.0;
    const char* first = s_.data() + pos_;
    const char* last = s_.data() + s_.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr == first) error("expected a number");
    pos_ += static_cast<std::size_t>(ptr - first);
    return v;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

bool compare(double a, CompareOp op, double b) {
  switch (op) {
    case CompareOp::Eq: return a == b;
    case CompareOp::Ne: return a != b;
    case CompareOp::Lt: return a < b;
    case CompareOp::Le: return a <= b;
    case CompareOp::Gt: return a > b;
    case CompareOp::Ge: return a >= b;
  }
  return false;
}

}  // namespace

RulePredicate parse_rule_predicate(std::string_view text) { return PredicateParser(text).parse(); }

bool RulePredicate::holds(const StatMap& row) const {
  switch (kind) {
    case Kind::Compare: {
      auto it = row.find(stat);
      return it != row.end() && compare(it->second.value, op, value);
    }
    case Kind::And:
      for (const auto& o : operands)
        if (!o.holds(row)) return false;
      return true;
    case Kind::Or:
      for (const auto& o : operands)
        if (o.holds(row)) return true;
      return false;
  }
  return false;
}

void RulePredicate::referenced(std::vector<std::string>& out) const {
  if (kind == Kind::Compare) {
    if (std::find(out.begin(), out.end(), stat) == out.end()) out.push_back(stat);
    return;
  }
  for (const auto& o : operands) o.referenced(out);
}

std::string RulePredicate::to_string() const {
  if (kind == Kind::Compare) {
    std::ostringstream os;
    os.precision(17);
    os << stat << ' ' << compare_op_symbol(op) << ' ' << value;
    return os.str();
  }
  std::string out = "(";
  for (std::size_t i = 0; i < operands.size(); ++i) {
    if (i) out += kind == Kind::And ? " AND " : " OR ";
    out += operands[i].to_string();
  }
  return out + ")";
}

}  // namespace optbench
