#include "optbench/query_suite.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <random>

#include "optbench/ml_kernels.hpp"
#include "optbench/plan_json.hpp"

namespace optbench {

using nlohmann::json;

namespace {

// Models do not depend on the data seed, so plan documents stay fixed.
constexpr std::uint64_t kModelSeed = 1009;

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : g_(seed) {}
  double unit() { return static_cast<double>(g_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  std::int64_t integer(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(g_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  bool chance(double p) { return unit() < p; }

 private:
  std::mt19937_64 g_;
};

Rng seeded(std::uint64_t seed, std::string_view a, std::string_view b = {}) {
  return Rng(hash_combine(hash_combine(seed, stable_hash(a)), stable_hash(b)));
}

// ---- declarative table generators -----------------------------------------

struct Feature {
  std::string name;
  double lo;
  double hi;
  bool integer;
};

struct ColumnGen {
  std::string name;
  DType type;
  std::function<Value(Rng&, std::size_t row)> gen;
};

struct TableGen {
  std::string name;
  std::vector<ColumnGen> columns;
  bool fact = false;  // scales with the scale factor
  std::size_t base_rows = 0;
};

ColumnGen numeric(const Feature& f, double zero_fraction = 0.0) {
  if (f.integer)
    return {f.name, DType::int64(), [f](Rng& r, std::size_t) {
              return Value(r.integer(static_cast<std::int64_t>(f.lo), static_cast<std::int64_t>(f.hi)));
            }};
  return {f.name, DType::float64(), [f, zero_fraction](Rng& r, std::size_t) {
            const double v = r.uniform(f.lo, f.hi);
            return Value(zero_fraction > 0.0 && r.chance(zero_fraction) ? 0.0 : v);
          }};
}

ColumnGen key(std::string name, std::int64_t offset = 1) {
  return {std::move(name), DType::int64(),
          [offset](Rng&, std::size_t row) { return Value(static_cast<std::int64_t>(row) + offset); }};
}

ColumnGen foreign_key(std::string name, std::size_t n, std::int64_t offset = 1) {
  return {std::move(name), DType::int64(), [n, offset](Rng& r, std::size_t) {
            return Value(offset + r.integer(0, static_cast<std::int64_t>(n) - 1));
          }};
}

ColumnGen categorical(std::string name, std::vector<std::string> values, std::vector<double> weights = {}) {
  return {std::move(name), DType::string(), [values = std::move(values), weights = std::move(weights)](Rng& r, std::size_t) {
            if (weights.empty()) return Value(values[static_cast<std::size_t>(r.integer(0, static_cast<std::int64_t>(values.size()) - 1))]);
            double u = r.unit();
            for (std::size_t i = 0; i < values.size(); ++i) {
              if (u < weights[i]) return Value(values[i]);
              u -= weights[i];
            }
            return Value(values.back());
          }};
}

ColumnGen image(std::string name, int side) {
  return {std::move(name), DType::matrix(side, side), [side](Rng& r, std::size_t) {
            Matrix m{side, side, std::vector<double>(static_cast<std::size_t>(side) * side)};
            for (auto& x : m.data) x = r.unit();
            return Value(std::move(m));
          }};
}

std::vector<ColumnGen> numerics(const std::vector<Feature>& fs, double zero_fraction = 0.0) {
  std::vector<ColumnGen> out;
  for (const auto& f : fs) out.push_back(numeric(f, zero_fraction));
  return out;
}

std::vector<ColumnGen> join_columns(std::vector<ColumnGen> a, std::vector<ColumnGen> b) {
  a.insert(a.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
  return a;
}

Schema schema_of(const TableGen& t) {
  std::vector<Column> cols;
  for (const auto& c : t.columns) cols.push_back({c.name, c.type});
  return Schema(std::move(cols));
}

Table realize(const TableGen& t, std::size_t rows, std::uint64_t seed) {
  Table out;
  out.name = t.name;
  out.schema = schema_of(t);
  for (const auto& c : t.columns) {
    Rng rng = seeded(seed, t.name, c.name);
    std::vector<Value> values;
    values.reserve(rows);
    for (std::size_t i = 0; i < rows; ++i) values.push_back(c.gen(rng, i));
    out.columns.push_back(std::move(values));
  }
  out.validate();
  return out;
}

std::vector<std::string> labels(std::string_view prefix, int n, int width = 2) {
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i) {
    std::string num = std::to_string(i);
    while (static_cast<int>(num.size()) < width) num = "0" + num;
    out.push_back(std::string(prefix) + num);
  }
  return out;
}

// ---- Expedia --------------------------------------------------------------

const std::vector<Feature> kExpediaFact = {
    {"position", 1, 40, true},     {"price_usd", 20, 500, false}, {"orig_destination_distance", 0, 5000, false},
    {"count_clicks", 0, 30, true}, {"count_bookings", 0, 20, true}, {"random_bool", 0, 1, true}};
const std::vector<Feature> kExpediaHotels = {
    {"prop_location_score1", 0, 5, false},   {"prop_location_score2", 0, 0.5, false},
    {"prop_log_historical_price", 3, 6, false}, {"prop_review_score", 0, 5, false},
    {"avg_bookings_usd", 0, 1000, false},    {"stdev_bookings_usd", 0, 300, false},
    {"prop_country_id", 1, 100, true},       {"prop_starrating", 1, 5, true},
    {"prop_brand_bool", 0, 1, true}};
const std::vector<Feature> kExpediaSearches = {
    {"year", 2012, 2013, true},          {"month", 1, 12, true},
    {"weekofyear", 1, 52, true},         {"time", 0, 86399, true},
    {"site_id", 1, 30, true},            {"visitor_location_country_id", 1, 200, true},
    {"srch_destination_id", 1, 5000, true}, {"srch_length_of_stay", 1, 7, true},
    {"srch_booking_window", 0, 60, true},   {"srch_adults_count", 1, 4, true},
    {"srch_children_count", 0, 3, true},    {"srch_room_count", 1, 3, true},
    {"srch_saturday_night_bool", 0, 1, true}};
const std::vector<std::string> kExpediaFeatures = {
    "prop_location_score1", "prop_location_score2", "prop_log_historical_price", "price_usd",
    "orig_destination_distance", "prop_review_score", "avg_bookings_usd", "stdev_bookings_usd",
    "position", "prop_country_id", "prop_starrating", "prop_brand_bool", "count_clicks", "count_bookings",
    "year", "month", "weekofyear", "time", "site_id", "visitor_location_country_id", "srch_destination_id",
    "srch_length_of_stay", "srch_booking_window", "srch_adults_count", "srch_children_count",
    "srch_room_count", "srch_saturday_night_bool", "random_bool"};
const std::vector<std::string> kExpediaFiltered = {"prop_location_score1", "prop_location_score2",
                                                   "prop_log_historical_price", "count_bookings",
                                                   "srch_booking_window", "srch_length_of_stay"};

// ---- Flights --------------------------------------------------------------

const std::vector<Feature> kFlightsAirlines = {{"name1", 0, 5, false}, {"acountry", 1, 100, true}, {"active", 0, 1, true}};
std::vector<Feature> airport_features(const std::string& p) {
  return {{p + "latitude", -60, 70, false}, {p + "longitude", -180, 180, false}, {p + "city", 1, 800, true},
          {p + "country", 1, 100, true},    {p + "timezone", -11, 12, true},    {p + "dst", 0, 1, true}};
}
const std::vector<std::string> kFlightsFeatures = {"slatitude", "slongitude", "dlatitude", "dlongitude", "name1",
                                                   "acountry",  "active",     "scity",     "scountry",   "stimezone",
                                                   "sdst",      "dcity",      "dcountry",  "dtimezone",  "ddst"};

// ---- Credit ---------------------------------------------------------------

std::vector<Feature> credit_v() {
  std::vector<Feature> out;
  for (int i = 1; i <= 28; ++i) out.push_back({"V" + std::to_string(i), -3, 3, false});
  return out;
}
const Feature kCreditAmount{"Amount", 0, 500, false};

// ---- Q_UC04 text ----------------------------------------------------------

const std::vector<std::string> kSpamWords = {"free", "win", "offer", "click", "prize", "cash", "deal", "bonus",
                                             "winner", "discount", "limited", "urgent", "buy", "cheap", "promo"};
const std::vector<std::string> kHamWords = {"hotel", "room", "clean", "staff", "great", "location", "breakfast",
                                            "quiet", "friendly", "comfortable", "view", "pool", "service", "stay",
                                            "helpful", "spacious", "walk", "beach"};
const std::vector<std::string> kCommonWords = {"the", "and", "was", "very", "we", "it", "a", "to", "our"};
constexpr double kSpamPrior = 0.4;
constexpr double kOwnVocab = 0.6, kOtherVocab = 0.15, kCommonVocab = 0.25;

ColumnGen review_text() {
  return {"text", DType::string(), [](Rng& r, std::size_t) {
            const bool spam = r.chance(kSpamPrior);
            const auto& own = spam ? kSpamWords : kHamWords;
            const auto& other = spam ? kHamWords : kSpamWords;
            const auto n = r.integer(15, 30);
            std::string text;
            auto pick = [&](const std::vector<std::string>& v) {
              return v[static_cast<std::size_t>(r.integer(0, static_cast<std::int64_t>(v.size()) - 1))];
            };
            for (std::int64_t i = 0; i < n; ++i) {
              const double u = r.unit();
              if (i) text += ' ';
              text += u < kOwnVocab ? pick(own) : u < kOwnVocab + kOtherVocab ? pick(other) : pick(kCommonWords);
            }
            return Value(text + (spam && r.chance(0.5) ? "!" : "."));
          }};
}

// ---- dataset catalog ------------------------------------------------------

std::string dataset_of(const std::string& query_id) {
  static const std::map<std::string, std::string> m = {
      {"Q_Expedia", "expedia"}, {"Q_Flights", "flights"},     {"Q_Credit", "credit"},      {"Q_UC01", "tpcxai_uc01"},
      {"Q_UC03", "tpcxai_uc03"}, {"Q_UC04", "tpcxai_uc04"}, {"Q_UC08", "tpcxai_uc08"}, {"Q_UC10", "tpcxai_uc10"},
      {"Q_IDNet1", "idnet"},     {"Q_IDNet2", "idnet10k"}};
  auto it = m.find(query_id);
  if (it == m.end()) fail(ErrorCode::UnknownQuery, "unknown query '" + query_id + "'", query_id);
  return it->second;
}

/// Table generators of a dataset; foreign-key domains follow `rows`.
std::vector<TableGen> dataset_tables(const std::string& dataset, const std::map<std::string, std::size_t>& rows,
                                     double sparsity) {
  auto n = [&](const std::string& t, std::size_t fallback) {
    auto it = rows.find(t);
    return it == rows.end() ? fallback : it->second;
  };
  std::vector<TableGen> out;
  if (dataset == "expedia") {
    const auto hotels = n("Expedia_R1_hotels2", 500), searches = n("Expedia_R2_searches", 2000);
    out.push_back({"Expedia_S_listings_extension2",
                   join_columns({foreign_key("prop_id", hotels), foreign_key("srch_id", searches)}, numerics(kExpediaFact)),
                   true, 20000});
    out.push_back({"Expedia_R1_hotels2", join_columns({key("h_prop_id")}, numerics(kExpediaHotels)), false, 500});
    out.push_back({"Expedia_R2_searches", join_columns({key("s_srch_id")}, numerics(kExpediaSearches)), false, 2000});
  } else if (dataset == "flights") {
    const auto airlines = n("Flights_R1_airlines2", 300), airports = n("Flights_R2_sairports", 1000),
               dairports = n("Flights_R3_dairports", 1000);
    out.push_back({"Flights_S_routes_extension2",
                   {foreign_key("airlineid", airlines), foreign_key("sairportid", airports),
                    foreign_key("dairportid", dairports)},
                   true, 20000});
    auto airline_cols = join_columns({key("a_airlineid")}, numerics(kFlightsAirlines));
    airline_cols.push_back(categorical("name2", {"t", "f"}, {0.5, 0.5}));
    airline_cols.push_back(categorical("name4", {"t", "f"}, {0.6, 0.4}));
    out.push_back({"Flights_R1_airlines2", std::move(airline_cols), false, 300});
    out.push_back({"Flights_R2_sairports", join_columns({key("s_sairportid")}, numerics(airport_features("s"))), false, 1000});
    out.push_back({"Flights_R3_dairports", join_columns({key("d_dairportid")}, numerics(airport_features("d"))), false, 1000});
  } else if (dataset == "credit") {
    std::vector<ColumnGen> cols{numeric({"Time", 0, 172800, false})};
    auto v = numerics(credit_v(), sparsity);
    cols.insert(cols.end(), v.begin(), v.end());
    cols.push_back(numeric(kCreditAmount));
    out.push_back({"Credit_Card_extension", std::move(cols), true, 20000});
  } else if (dataset == "tpcxai_uc01") {
    const auto orders = n("order", 6000);
    out.push_back({"lineitem",
                   {foreign_key("li_order_id", orders), foreign_key("li_product_id", 1000), numeric({"quantity", 1, 10, true}),
                    numeric({"price", 1, 100, false}),
                    {"or_return_quantity", DType::int64(),
                     [](Rng& r, std::size_t) { return Value(r.chance(0.15) ? r.integer(1, 3) : std::int64_t{0}); }}},
                   true, 30000});
    out.push_back({"order", {key("o_order_id"), numeric({"o_customer_sk", 1, 500, true}), numeric({"o_year", 2019, 2023, true})},
                   false, 6000});
  } else if (dataset == "tpcxai_uc03") {
    out.push_back({"store_dept",
                   {numeric({"store", 1, 50, true}), categorical("department", labels("dept_", 30)),
                    numeric({"num_of_week", 1, 156, true})},
                   true, 10000});
  } else if (dataset == "tpcxai_uc04") {
    out.push_back({"review", {key("id"), review_text()}, true, 5000});
  } else if (dataset == "tpcxai_uc08") {
    const auto orders = n("order", 8000), products = n("product", 1000);
    out.push_back({"order",
                   {key("o_order_id"), numeric({"o_date", 18000, 19000, true}), numeric({"o_weekday", 0, 6, true}),
                    numeric({"o_store", 1, 40, true}), numeric({"o_scan_count", 1, 20, true})},
                   false, 8000});
    out.push_back({"lineitem",
                   {foreign_key("li_order_id", orders), foreign_key("li_product_id", products), numeric({"quantity", 1, 10, true})},
                   true, 32000});
    out.push_back({"product", {key("p_product_id"), categorical("department", labels("dept_", 30))}, false, 1000});
  } else if (dataset == "tpcxai_uc10") {
    const auto accounts = n("financial_account", 2000);
    out.push_back({"financial_account", {key("fa_customer_sk"), numeric({"transaction_limit", 1000, 10000, false})}, false, 2000});
    out.push_back({"financial_transactions",
                   {key("transaction_id"), foreign_key("sender_id", accounts), numeric({"hour", 0, 23, true}),
                    numeric({"amount", 1, 5000, false})},
                   true, 20000});
  } else if (dataset == "idnet") {
    const auto ids = n("idnet", 2000);
    out.push_back({"idnet", {key("license_number", 100001), image("imageData", 16), numeric({"issue_year", 2000, 2024, true})},
                   false, 2000});
    out.push_back({"toll_audit",
                   {foreign_key("t_license_number", ids, 100001), numeric({"toll_amount", 1, 30, false}),
                    numeric({"plaza_id", 1, 50, true})},
                   true, 8000});
  } else if (dataset == "idnet10k") {
    out.push_back({"idnet10k", {key("license_number", 100001), image("imageData", 16)}, true, 1000});
  } else {
    fail(ErrorCode::InvalidSpec, "unknown dataset '" + dataset + "'", "/dataset");
  }
  return out;
}

Schema table_schema(const std::string& dataset, const std::string& table) {
  for (const auto& t : dataset_tables(dataset, {}, 0.0))
    if (t.name == table) return schema_of(t);
  fail(ErrorCode::Internal, "no table '" + table + "' in dataset " + dataset);
}

// ---- models ---------------------------------------------------------------

DenseMatrix random_weights(Rng& r, int rows, int cols) {
  DenseMatrix w{rows, cols, std::vector<double>(static_cast<std::size_t>(rows) * cols)};
  const double s = 1.0 / std::sqrt(static_cast<double>(rows));
  for (auto& x : w.data) x = r.uniform(-s, s);
  return w;
}

BiasVector random_bias(Rng& r, int n) {
  BiasVector b{std::vector<double>(static_cast<std::size_t>(n))};
  for (auto& x : b.data) x = r.uniform(-0.1, 0.1);
  return b;
}

/// Full binary tree of `depth` levels of splits. A split picks one of
/// `preferred` with probability `prefer_p`, else any feature, and a threshold
/// inside that feature's value range.
DecisionTree random_tree(Rng& r, const std::vector<Feature>& feats, int depth, const std::function<double(Rng&)>& leaf,
                         const std::vector<int>& preferred = {}, double prefer_p = 0.0) {
  DecisionTree t;
  std::function<int(int)> grow = [&](int level) -> int {
    const int idx = static_cast<int>(t.nodes.size());
    t.nodes.emplace_back();
    if (level == depth) {
      t.nodes[static_cast<std::size_t>(idx)].value = leaf(r);
      return idx;
    }
    int f = 0;
    if (!preferred.empty() && r.chance(prefer_p))
      f = preferred[static_cast<std::size_t>(r.integer(0, static_cast<std::int64_t>(preferred.size()) - 1))];
    else
      f = static_cast<int>(r.integer(0, static_cast<std::int64_t>(feats.size()) - 1));
    const Feature& ft = feats[static_cast<std::size_t>(f)];
    const double thr = ft.integer ? std::floor(r.uniform(ft.lo, ft.hi)) + 0.5 : r.uniform(ft.lo, ft.hi);
    const int l = grow(level + 1);
    const int rt = grow(level + 1);
    t.nodes[static_cast<std::size_t>(idx)] = TreeNode{f, thr, l, rt, 0.0};
    return idx;
  };
  grow(0);
  return t;
}

const Feature& find_feature(const std::vector<std::vector<Feature>>& groups, const std::string& name) {
  for (const auto& g : groups)
    for (const auto& f : g)
      if (f.name == name) return f;
  fail(ErrorCode::Internal, "no feature " + name);
}

std::vector<Feature> ordered(const std::vector<std::vector<Feature>>& groups, const std::vector<std::string>& names) {
  std::vector<Feature> out;
  for (const auto& n : names) out.push_back(find_feature(groups, n));
  return out;
}

void add_layer(ModelStore& m, Rng& r, const std::string& prefix, int layer, int in, int out) {
  m.add(prefix + "_w" + std::to_string(layer), random_weights(r, in, out));
  m.add(prefix + "_b" + std::to_string(layer), random_bias(r, out));
}

EncoderModel int_encoder(int lo, int hi) {
  EncoderModel e;
  for (int i = lo; i <= hi; ++i) e.categories.push_back(std::to_string(i));
  return e;
}

NaiveBayesModel spam_model() {
  NaiveBayesModel nb;
  // Likelihoods follow the generating mixture; index 1 is the spam class.
  auto add = [&](const std::vector<std::string>& words, double p_ham, double p_spam) {
    for (const auto& w : words)
      nb.log_likelihood[w] = {std::log(p_ham / static_cast<double>(words.size())),
                              std::log(p_spam / static_cast<double>(words.size()))};
  };
  add(kSpamWords, kOtherVocab, kOwnVocab);
  add(kHamWords, kOwnVocab, kOtherVocab);
  add(kCommonWords, kCommonVocab, kCommonVocab);
  nb.log_prior = {std::log(1.0 - kSpamPrior), std::log(kSpamPrior)};
  return nb;
}

constexpr int kImageSide = 16;
constexpr int kFilters = 4;
constexpr int kFilterSide = 3;
constexpr int kConvOut = kFilters * (kImageSide - kFilterSide + 1) * (kImageSide - kFilterSide + 1);

/// CNN head whose second logit bias splits probe images about evenly, so the
/// classifier filter keeps a nontrivial fraction of rows.
void idnet_models(ModelStore& m, Rng& r) {
  FilterBank fb{kFilters, kFilterSide, kFilterSide, std::vector<double>(kFilters * kFilterSide * kFilterSide)};
  for (auto& x : fb.data) x = r.uniform(-1.0 / kFilterSide, 1.0 / kFilterSide);
  DenseMatrix w = random_weights(r, kConvOut, 2);
  std::vector<double> margins;
  for (int i = 0; i < 201; ++i) {
    Matrix img{kImageSide, kImageSide, std::vector<double>(kImageSide * kImageSide)};
    for (auto& x : img.data) x = r.unit();
    Matrix conv = conv2d_direct(img, fb);
    for (auto& x : conv.data) x = std::max(0.0, x);
    const auto logits = matmul_dense(conv.data, 1, WeightView{&w, 0, w.rows});
    margins.push_back(logits[0] - logits[1]);
  }
  std::nth_element(margins.begin(), margins.begin() + 100, margins.end());
  m.add("idnet_filters", std::move(fb));
  m.add("idnet_w", std::move(w));
  m.add("idnet_b", BiasVector{{0.0, margins[100]}});
}

// ---- expression helpers ---------------------------------------------------

ExprPtr concat_columns(const std::vector<std::string>& names) {
  std::vector<ExprPtr> args;
  for (const auto& n : names) args.push_back(col(n));
  return func("concat", std::move(args));
}

ExprPtr dense_layer(ExprPtr x, const std::string& prefix, int layer, int in, int out,
                    std::optional<MLFunctionId> activation) {
  MLAttrs w;
  w.model_id = prefix + "_w" + std::to_string(layer);
  w.weight_shape = std::pair{in, out};
  MLAttrs b;
  b.model_id = prefix + "_b" + std::to_string(layer);
  b.bias_shape = out;
  ExprPtr e = ml(MLFunctionId::MatrixAddition, {ml(MLFunctionId::MatrixMultiply, {std::move(x)}, std::move(w))}, std::move(b));
  return activation ? ml(*activation, {e}) : e;
}

MLAttrs model_attr(std::string id) {
  MLAttrs a;
  a.model_id = std::move(id);
  return a;
}

MLAttrs tree_attrs(const ModelStore& m, const std::string& id) {
  MLAttrs a = model_attr(id);
  a.tree_spec = std::make_shared<TreeEnsemble>(m.get_as<TreeEnsemble>(id));
  return a;
}

ExprPtr one_hot(const std::string& column, const std::string& model, int dim) {
  MLAttrs a = model_attr(model);
  a.out_dim = dim;
  return ml(MLFunctionId::OneHotEncoder, {col(column)}, std::move(a));
}

ExprPtr gt(const std::string& c, Value v) { return cmp(CompareOp::Gt, col(c), lit(std::move(v))); }
ExprPtr lt(const std::string& c, Value v) { return cmp(CompareOp::Lt, col(c), lit(std::move(v))); }
ExprPtr eq(const std::string& a, const std::string& b) { return cmp(CompareOp::Eq, col(a), col(b)); }

PlanPtr table(const std::string& dataset, const std::string& name) { return scan(name, table_schema(dataset, name)); }

std::vector<NamedExpr> pass(const std::vector<std::string>& names) {
  std::vector<NamedExpr> out;
  for (const auto& n : names) out.push_back({col(n), n});
  return out;
}

constexpr std::string_view kJudgePrompt =
    "Tell me whether the INPUT image is fraudulent or not using the reference image(s) and the LLM responses.";
constexpr std::string_view kReferencePrompt = "Is this image fraudulent? Reply 1 for fraud, 0 otherwise.";

struct QueryInfo {
  std::string description;
  std::string ml_udf;
  std::set<MLFunctionId> functions;
};

const std::map<std::string, QueryInfo>& query_info() {
  using F = MLFunctionId;
  static const std::map<std::string, QueryInfo> m = {
      {"Q_Expedia", {"Hotel ranking score per (srch_id, prop_id) after six selective filters over a 3-way join.",
                     "Decision Tree", {F::DecisionTree}}},
      {"Q_Flights", {"Codeshare label per route after joining airline and source/destination airports.",
                     "Decision Forest", {F::DecisionForest}}},
      {"Q_Credit", {"Fraud score per filtered transaction from V1..V28 and Amount.", "XGBoost", {F::DecisionForest}}},
      {"Q_UC01", {"Customer cluster from scaled return ratio and purchase frequency.", "KMeans++",
                  {F::MinMaxScaler, F::KMeans}}},
      {"Q_UC03", {"Prediction per (store, department, week) from encoded features.", "DNN",
                  {F::OneHotEncoder, F::MatrixMultiply, F::MatrixAddition, F::Relu}}},
      {"Q_UC04", {"Spam label per review from token-level naive Bayes scoring.", "Naive Bayes", {F::NaiveBayes}}},
      {"Q_UC08", {"Order class per line item from order-level encoded features.", "DNN + Softmax",
                  {F::OneHotEncoder, F::MatrixMultiply, F::MatrixAddition, F::Relu, F::Softmax, F::Argmax}}},
      {"Q_UC10", {"Fraud probability per transaction from amount, hour and account limit.", "DNN + Sigmoid",
                  {F::MatrixMultiply, F::MatrixAddition, F::Relu, F::Sigmoid}}},
      {"Q_IDNet1", {"Toll records of identity images the CNN classifies as non-fraud.", "CNN",
                    {F::Conv2d, F::Relu, F::MatrixMultiply, F::MatrixAddition, F::Argmax}}},
      {"Q_IDNet2", {"Fraud verdict per sampled image by majority over LLM votes against reference pairs.", "LLM",
                    {F::Llm}}},
  };
  return m;
}

}  // namespace

const std::vector<std::string>& suite_query_ids() {
  static const std::vector<std::string> ids = {"Q_Expedia", "Q_Flights", "Q_Credit", "Q_UC01",   "Q_UC03",
                                               "Q_UC04",    "Q_UC08",    "Q_UC10",   "Q_IDNet1", "Q_IDNet2"};
  return ids;
}

ModelStore build_models(const std::string& id) {
  dataset_of(id);  // validates the id
  ModelStore m;
  Rng r = seeded(kModelSeed, id);
  if (id == "Q_Expedia") {
    const auto feats = ordered({kExpediaFact, kExpediaHotels, kExpediaSearches}, kExpediaFeatures);
    std::vector<int> filtered;
    for (const auto& f : kExpediaFiltered)
      filtered.push_back(static_cast<int>(std::find(kExpediaFeatures.begin(), kExpediaFeatures.end(), f) - kExpediaFeatures.begin()));
    TreeEnsemble e;
    e.trees.push_back(random_tree(r, feats, 6, [](Rng& g) { return g.unit(); }, filtered, 0.4));
    e.num_features = static_cast<int>(feats.size());
    m.add("expedia_tree", std::move(e));
  } else if (id == "Q_Flights") {
    const auto feats = ordered({kFlightsAirlines, airport_features("s"), airport_features("d")}, kFlightsFeatures);
    TreeEnsemble e;
    e.aggregation = ForestAggregation::Majority;
    for (int i = 0; i < 10; ++i)
      e.trees.push_back(random_tree(r, feats, 5, [](Rng& g) { return g.chance(0.5) ? 1.0 : 0.0; }, {4}, 0.2));
    e.num_features = static_cast<int>(feats.size());
    m.add("flights_forest", std::move(e));
  } else if (id == "Q_Credit") {
    auto feats = credit_v();
    feats.push_back(kCreditAmount);
    TreeEnsemble e;
    e.aggregation = ForestAggregation::Sum;
    for (int i = 0; i < 20; ++i)
      e.trees.push_back(random_tree(r, feats, 4, [](Rng& g) { return g.uniform(-0.1, 0.1); }, {0, 1, 2}, 0.3));
    e.num_features = static_cast<int>(feats.size());
    m.add("credit_xgb", std::move(e));
  } else if (id == "Q_UC01") {
    m.add("uc01_scaler", ScalerModel{{0.0, 0.0}, {6.0, 0.4}});
    KMeansModel km{4, 2, {}};
    for (int i = 0; i < 8; ++i) km.centroids.push_back(r.unit());
    m.add("uc01_kmeans_model", std::move(km));
  } else if (id == "Q_UC03") {
    m.add("uc03_store_encoder", int_encoder(1, 50));
    m.add("uc03_department_encoder", EncoderModel{labels("dept_", 30)});
    add_layer(m, r, "uc03", 1, 81, 32);
    add_layer(m, r, "uc03", 2, 32, 1);
  } else if (id == "Q_UC04") {
    m.add("uc04_model", spam_model());
  } else if (id == "Q_UC08") {
    m.add("uc08_weekday_encoder", int_encoder(0, 6));
    m.add("uc08_store_encoder", int_encoder(1, 40));
    add_layer(m, r, "uc08", 1, 48, 64);
    add_layer(m, r, "uc08", 2, 64, 32);
    add_layer(m, r, "uc08", 3, 32, 8);
  } else if (id == "Q_UC10") {
    add_layer(m, r, "uc10", 1, 3, 16);
    add_layer(m, r, "uc10", 2, 16, 1);
  } else if (id == "Q_IDNet1") {
    idnet_models(m, r);
  }
  return m;
}

PlanPtr build_query(const std::string& id) {
  const std::string ds = dataset_of(id);
  const ModelStore models = build_models(id);
  using F = MLFunctionId;
  if (id == "Q_Expedia") {
    PlanPtr j = join(join(table(ds, "Expedia_S_listings_extension2"), table(ds, "Expedia_R1_hotels2"), eq("prop_id", "h_prop_id")),
                     table(ds, "Expedia_R2_searches"), eq("srch_id", "s_srch_id"));
    PlanPtr f = filter(j, conj({gt("prop_location_score1", 1.0), gt("prop_location_score2", 0.1),
                                gt("prop_log_historical_price", 4.0), gt("count_bookings", 5), gt("srch_booking_window", 10),
                                gt("srch_length_of_stay", 1)}));
    return project(f, {{col("prop_id"), "prop_id"},
                       {col("srch_id"), "srch_id"},
                       {ml(F::DecisionTree, {concat_columns(kExpediaFeatures)}, tree_attrs(models, "expedia_tree")), "score"}});
  }
  if (id == "Q_Flights") {
    PlanPtr j = join(table(ds, "Flights_S_routes_extension2"), table(ds, "Flights_R1_airlines2"), eq("airlineid", "a_airlineid"));
    j = join(j, table(ds, "Flights_R2_sairports"), eq("sairportid", "s_sairportid"));
    j = join(j, table(ds, "Flights_R3_dairports"), eq("dairportid", "d_dairportid"));
    PlanPtr f = filter(j, conj({cmp(CompareOp::Eq, col("name2"), lit(Value("t"))), cmp(CompareOp::Eq, col("name4"), lit(Value("t"))),
                                gt("name1", 2.8)}));
    auto items = pass({"airlineid", "sairportid", "dairportid"});
    items.push_back({ml(F::DecisionForest, {concat_columns(kFlightsFeatures)}, tree_attrs(models, "flights_forest")), "codeshare"});
    return project(f, std::move(items));
  }
  if (id == "Q_Credit") {
    PlanPtr f = filter(table(ds, "Credit_Card_extension"), conj({gt("V1", 1.0), lt("V2", 0.27), gt("V3", 0.3)}));
    std::vector<std::string> feats;
    for (const auto& v : credit_v()) feats.push_back(v.name);
    feats.push_back("Amount");
    auto items = pass({"Time", "Amount"});
    items.push_back({ml(F::DecisionForest, {concat_columns(feats)}, tree_attrs(models, "credit_xgb")), "Class"});
    return project(f, std::move(items));
  }
  if (id == "Q_UC01") {
    PlanPtr j = join(table(ds, "lineitem"), table(ds, "order"), eq("li_order_id", "o_order_id"));
    PlanPtr groups = aggregate(
        j, {{col("o_customer_sk"), "customer_id"}, {col("o_order_id"), "order_id"}},
        {{AggFn::Min, col("o_year"), "invoice_year"},
         {AggFn::Sum, arith(ArithOp::Mul, col("quantity"), col("price")), "row_price"},
         {AggFn::Sum, arith(ArithOp::Mul, col("or_return_quantity"), col("price")), "return_row_price"}});
    PlanPtr ratios = aggregate(project(groups, {{col("customer_id"), "customer_id"},
                                                {arith(ArithOp::Div, col("return_row_price"), col("row_price")), "ratio"}}),
                               {{col("customer_id"), "customer_id"}}, {{AggFn::Avg, col("ratio"), "return_ratio"}});
    PlanPtr freq_groups = aggregate(groups, {{col("customer_id"), "f_customer_id"}, {col("invoice_year"), "invoice_year"}},
                                    {{AggFn::Count, nullptr, "orders_per_year"}});
    PlanPtr freq = aggregate(freq_groups, {{col("f_customer_id"), "f_customer_id"}},
                             {{AggFn::Avg, col("orders_per_year"), "frequency"}});
    PlanPtr raw = join(ratios, freq, eq("customer_id", "f_customer_id"));
    PlanPtr features = project(
        raw, {{col("customer_id"), "customer_id"},
              {ml(F::MinMaxScaler, {concat_columns({"frequency", "return_ratio"})}, model_attr("uc01_scaler")), "features"}});
    return project(features, {{col("customer_id"), "customer_id"},
                               {ml(F::KMeans, {col("features")}, model_attr("uc01_kmeans_model")), "cluster_id"}});
  }
  if (id == "Q_UC03") {
    PlanPtr feat = project(
        table(ds, "store_dept"),
        {{col("store"), "store"},
         {col("department"), "department"},
         {col("num_of_week"), "num_of_week"},
         {func("concat", {one_hot("store", "uc03_store_encoder", 50), one_hot("department", "uc03_department_encoder", 30),
                          arith(ArithOp::Div, col("num_of_week"), lit(156.0))}),
          "features"}});
    ExprPtr h = dense_layer(col("features"), "uc03", 1, 81, 32, F::Relu);
    ExprPtr y = dense_layer(h, "uc03", 2, 32, 1, std::nullopt);
    auto items = pass({"store", "department", "num_of_week"});
    items.push_back({func("element", {y, lit(Value(std::int64_t{0}))}), "prediction"});
    return project(feat, std::move(items));
  }
  if (id == "Q_UC04") {
    return project(table(ds, "review"),
                   {{col("id"), "id"}, {ml(F::NaiveBayes, {col("text")}, model_attr("uc04_model")), "predicted_spam"}});
  }
  if (id == "Q_UC08") {
    PlanPtr j = join(table(ds, "order"), table(ds, "lineitem"), eq("o_order_id", "li_order_id"));
    j = join(j, table(ds, "product"), eq("li_product_id", "p_product_id"));
    ExprPtr x = func("concat", {arith(ArithOp::Div, col("o_scan_count"), lit(20.0)),
                                one_hot("o_weekday", "uc08_weekday_encoder", 7), one_hot("o_store", "uc08_store_encoder", 40)});
    ExprPtr h1 = dense_layer(x, "uc08", 1, 48, 64, F::Relu);
    ExprPtr h2 = dense_layer(h1, "uc08", 2, 64, 32, F::Relu);
    ExprPtr y = dense_layer(h2, "uc08", 3, 32, 8, F::Softmax);
    return project(j, {{col("o_order_id"), "o_order_id"},
                       {col("o_date"), "date"},
                       {col("li_product_id"), "li_product_id"},
                       {col("department"), "department"},
                       {ml(F::Argmax, {y}), "prediction"}});
  }
  if (id == "Q_UC10") {
    PlanPtr tx = project(table(ds, "financial_transactions"),
                         {{col("transaction_id"), "transaction_id"},
                          {col("sender_id"), "sender_id"},
                          {arith(ArithOp::Div, func("to_double", {col("hour")}), lit(23.0)), "business_hour_norm"},
                          {col("amount"), "amount"}});
    PlanPtr j = join(table(ds, "financial_account"), tx, eq("fa_customer_sk", "sender_id"));
    ExprPtr x = func("concat", {col("business_hour_norm"), arith(ArithOp::Div, col("amount"), lit(5000.0)),
                                arith(ArithOp::Div, col("transaction_limit"), lit(10000.0))});
    ExprPtr y = dense_layer(dense_layer(x, "uc10", 1, 3, 16, F::Relu), "uc10", 2, 16, 1, F::Sigmoid);
    return project(j, {{col("transaction_id"), "transaction_id"},
                       {func("element", {y, lit(Value(std::int64_t{0}))}), "prediction"}});
  }
  if (id == "Q_IDNet1") {
    MLAttrs conv = model_attr("idnet_filters");
    conv.filter_spec = FilterSpec{kFilters, kFilterSide, kFilterSide};
    ExprPtr maps = ml(F::Relu, {ml(F::Conv2d, {col("imageData")}, std::move(conv))});
    ExprPtr logits = ml(F::MatrixAddition, {ml(F::MatrixMultiply, {func("flatten", {maps})}, [] {
                          MLAttrs a = model_attr("idnet_w");
                          a.weight_shape = std::pair{kConvOut, 2};
                          return a;
                        }())},
                        [] {
                          MLAttrs a = model_attr("idnet_b");
                          a.bias_shape = 2;
                          return a;
                        }());
    PlanPtr j = join(table(ds, "idnet"), table(ds, "toll_audit"), eq("license_number", "t_license_number"));
    return filter(j, cmp(CompareOp::Eq, func("to_int", {ml(F::Argmax, {logits})}), lit(Value(std::int64_t{0}))));
  }
  // Q_IDNet2
  PlanPtr src = table(ds, "idnet10k");
  PlanPtr input = project(sample(src, 10, 11), pass({"license_number", "imageData"}));
  PlanPtr ref1 = project(sample(src, 20, 12), {{col("imageData"), "ref_image1"}});
  PlanPtr ref2 = project(sample(src, 20, 13), {{col("imageData"), "ref_image2"}});
  auto ask = [](const std::string& image) { return ml(F::Llm, {lit(Value(std::string(kReferencePrompt))), col(image)}); };
  ExprPtr vote = ml(F::Llm, {lit(Value(std::string(kJudgePrompt))), col("imageData"), col("ref_image1"), ask("ref_image1"),
                             col("ref_image2"), ask("ref_image2")});
  PlanPtr votes = project(cross_join(cross_join(input, ref1), ref2),
                          {{col("license_number"), "license_number"}, {func("to_double", {vote}), "vote"}});
  return aggregate(votes, {{col("license_number"), "license_number"}},
                   {{AggFn::MajorityVote, col("vote"), "is_fraud"},
                    {AggFn::Avg, col("vote"), "fraud_vote_ratio"},
                    {AggFn::Count, nullptr, "num_votes"}});
}

DatasetSpec dataset_spec(const std::string& query_id, std::uint64_t seed, double scale) {
  if (!(scale > 0.0)) fail(ErrorCode::InvalidSpec, "scale must be positive", "/scale");
  DatasetSpec s;
  s.dataset = dataset_of(query_id);
  s.seed = seed;
  for (const auto& t : dataset_tables(s.dataset, {}, 0.0))
    s.rows[t.name] = t.fact ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(t.base_rows * scale))) : t.base_rows;
  return s;
}

Catalog generate_dataset(const DatasetSpec& spec) {
  if (spec.sparsity < 0.0 || spec.sparsity >= 1.0) fail(ErrorCode::InvalidSpec, "sparsity must be in [0, 1)", "/sparsity");
  const auto tables = dataset_tables(spec.dataset, spec.rows, spec.sparsity);
  for (const auto& [name, n] : spec.rows) {
    if (std::none_of(tables.begin(), tables.end(), [&](const TableGen& t) { return t.name == name; }))
      fail(ErrorCode::InvalidSpec, "dataset " + spec.dataset + " has no table '" + name + "'", "/rows/" + name);
    if (n == 0) fail(ErrorCode::InvalidSpec, "row count of '" + name + "' must be positive", "/rows/" + name);
  }
  Catalog c;
  for (const auto& t : tables) {
    auto it = spec.rows.find(t.name);
    if (it == spec.rows.end()) fail(ErrorCode::InvalidSpec, "missing row count for '" + t.name + "'", "/rows");
    c.add(realize(t, it->second, spec.seed));
  }
  return c;
}

QueryData generate_query_data(const std::string& query_id, std::uint64_t seed, double scale) {
  QueryData d{generate_dataset(dataset_spec(query_id, seed, scale)), build_models(query_id)};
  d.catalog.add_model_tables(d.models);
  return d;
}

SuiteEntry suite_entry(const std::string& id) {
  const auto& info = query_info();
  auto it = info.find(id);
  if (it == info.end()) fail(ErrorCode::UnknownQuery, "unknown query '" + id + "'", id);
  SuiteEntry e;
  e.id = id;
  e.description = it->second.description;
  e.ml_udf = it->second.ml_udf;
  e.plan = build_query(id);
  e.dataset = dataset_spec(id);
  e.expected_ml_functions = it->second.functions;
  const ModelStore models = build_models(id);
  for (const auto& mid : models.ids()) {
    const auto& m = models.get(mid);
    std::string shape;
    if (auto* w = std::get_if<DenseMatrix>(&m)) shape = std::to_string(w->rows) + "x" + std::to_string(w->cols);
    else if (auto* b = std::get_if<BiasVector>(&m)) shape = std::to_string(b->data.size());
    else if (auto* t = std::get_if<TreeEnsemble>(&m)) shape = std::to_string(t->trees.size()) + " trees, " + std::to_string(t->node_count()) + " nodes";
    else if (auto* k = std::get_if<KMeansModel>(&m)) shape = std::to_string(k->k) + "x" + std::to_string(k->dim);
    else if (auto* enc = std::get_if<EncoderModel>(&m)) shape = std::to_string(enc->categories.size()) + " categories";
    else if (auto* fb = std::get_if<FilterBank>(&m)) shape = std::to_string(fb->count) + "x" + std::to_string(fb->height) + "x" + std::to_string(fb->width);
    else if (auto* s = std::get_if<ScalerModel>(&m)) shape = std::to_string(s->min.size());
    else if (auto* nb = std::get_if<NaiveBayesModel>(&m)) shape = std::to_string(nb->log_likelihood.size()) + " tokens";
    e.models.push_back({mid, std::string(model_kind_name(m)), shape});
  }
  return e;
}

json dataset_spec_to_json(const DatasetSpec& s) {
  json rows = json::object();
  for (const auto& [k, v] : s.rows) rows[k] = v;
  return {{"dataset", s.dataset}, {"rows", rows}, {"seed", s.seed}, {"sparsity", s.sparsity}};
}

DatasetSpec dataset_spec_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::InvalidSpec, "dataset spec must be an object", "");
  DatasetSpec s;
  if (!j.contains("dataset") || !j["dataset"].is_string()) fail(ErrorCode::InvalidSpec, "missing 'dataset'", "/dataset");
  s.dataset = j["dataset"].get<std::string>();
  if (!j.contains("rows") || !j["rows"].is_object()) fail(ErrorCode::InvalidSpec, "missing 'rows'", "/rows");
  for (const auto& [k, v] : j["rows"].items()) {
    if (!v.is_number_integer() || v.get<long long>() <= 0)
      fail(ErrorCode::InvalidSpec, "row count must be a positive integer", "/rows/" + k);
    s.rows[k] = v.get<std::size_t>();
  }
  if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("sparsity")) s.sparsity = j["sparsity"].get<double>();
  return s;
}

json suite_entry_to_json(const SuiteEntry& e) {
  json models = json::array();
  for (const auto& m : e.models) models.push_back({{"id", m.id}, {"kind", m.kind}, {"shape", m.shape}});
  json fns = json::array();
  for (auto f : e.expected_ml_functions) fns.push_back(ml_function_name(f));
  return {{"id", e.id},       {"description", e.description}, {"ml_udf", e.ml_udf}, {"dataset", dataset_spec_to_json(e.dataset)},
          {"models", models}, {"expected_ml_functions", fns},  {"plan_hash", hex64(e.plan->hash())}};
}

std::filesystem::path suite_dir() {
  if (const char* env = std::getenv("OPTBENCH_SUITE_DIR"); env && *env) return env;
#ifdef OPTBENCH_SUITE_DIR
  return OPTBENCH_SUITE_DIR;
#else
  return "suite";
#endif
}

void export_suite(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "plans");
  fs::create_directories(dir / "specs");
  for (const auto& id : suite_query_ids()) {
    const SuiteEntry e = suite_entry(id);
    std::ofstream(dir / "plans" / (id + ".json")) << plan_to_document(*e.plan).dump(2) << "\n";
    std::ofstream(dir / "specs" / (id + ".json")) << suite_entry_to_json(e).dump(2) << "\n";
    const ModelStore models = build_models(id);
    if (models.size()) models.save_dir(dir / "models" / id);
  }
}

}  // namespace optbench
