#include "optbench/models.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace optbench {

using nlohmann::json;

double DecisionTree::predict(const std::vector<double>& x) const {
  int i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& n = nodes[i];
    if (n.feature >= static_cast<int>(x.size()))
      fail(ErrorCode::ShapeMismatch, "tree splits on feature " + std::to_string(n.feature) + " of a " +
                                         std::to_string(x.size()) + "-feature input");
    i = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes[i].value;
}

int DecisionTree::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  int best = 0;
  while (!stack.empty()) {
    auto [i, d] = stack.back();
    stack.pop_back();
    best = std::max(best, d);
    if (!nodes[i].is_leaf()) {
      stack.push_back({nodes[i].left, d + 1});
      stack.push_back({nodes[i].right, d + 1});
    }
  }
  return best;
}

double majority_of(const std::vector<double>& values) {
  std::map<double, int> counts;
  for (double v : values) ++counts[v];
  double best = 0.0;
  int best_count = -1;
  for (const auto& [v, c] : counts)
    if (c >= best_count) {
      best = v;
      best_count = c;
    }
  return best;
}

double TreeEnsemble::predict(const std::vector<double>& x) const {
  if (trees.empty()) fail(ErrorCode::ShapeMismatch, "empty tree ensemble");
  if (aggregation == ForestAggregation::Majority) {
    std::vector<double> votes;
    votes.reserve(trees.size());
    for (const auto& t : trees) votes.push_back(t.predict(x));
    return majority_of(votes);
  }
  double sum = 0.0;
  for (const auto& t : trees) sum += t.predict(x);
  return aggregation == ForestAggregation::Mean ? sum / static_cast<double>(trees.size()) : sum;
}

std::size_t TreeEnsemble::node_count() const {
  std::size_t n = 0;
  for (const auto& t : trees) n += t.nodes.size();
  return n;
}

std::string_view model_kind_name(const ModelPayload& m) {
  static constexpr std::string_view names[] = {"matrix", "bias", "forest",  "kmeans",
                                               "naive_bayes", "scaler", "encoder", "filter_bank"};
  return names[m.index()];
}

void ModelStore::add(const std::string& id, ModelPayload payload) {
  if (auto* e = std::get_if<TreeEnsemble>(&payload)) {
    for (const auto& t : e->trees)
      for (const auto& n : t.nodes)
        if (!n.is_leaf() && (n.left < 0 || n.right < 0 || n.left >= static_cast<int>(t.nodes.size()) ||
                             n.right >= static_cast<int>(t.nodes.size())))
          fail(ErrorCode::ValidationError, "forest '" + id + "' has a dangling child index");
  }
  if (auto* m = std::get_if<DenseMatrix>(&payload)) {
    if (m->rows <= 0 || m->cols <= 0 || m->data.size() != static_cast<std::size_t>(m->rows) * m->cols)
      fail(ErrorCode::ValidationError, "matrix '" + id + "' has inconsistent shape");
  }
  if (auto* f = std::get_if<FilterBank>(&payload)) {
    if (f->count <= 0 || f->height <= 0 || f->width <= 0 ||
        f->data.size() != static_cast<std::size_t>(f->count) * f->height * f->width)
      fail(ErrorCode::ValidationError, "filter bank '" + id + "' has inconsistent shape");
  }
  if (auto* k = std::get_if<KMeansModel>(&payload)) {
    if (k->centroids.size() != static_cast<std::size_t>(k->k) * k->dim)
      fail(ErrorCode::ValidationError, "kmeans '" + id + "' has inconsistent shape");
  }
  if (auto* s = std::get_if<ScalerModel>(&payload)) {
    if (s->min.size() != s->max.size()) fail(ErrorCode::ValidationError, "scaler '" + id + "' min/max differ");
  }
  models_[id] = std::make_shared<const ModelPayload>(std::move(payload));
}

const ModelPayload& ModelStore::get(const std::string& id) const {
  auto it = models_.find(id);
  if (it == models_.end()) fail(ErrorCode::UnknownModel, "unknown model '" + id + "'", id);
  return *it->second;
}

std::vector<std::string> ModelStore::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : models_) out.push_back(id);
  return out;
}

json ensemble_to_json(const TreeEnsemble& e) {
  json trees = json::array();
  for (const auto& t : e.trees) {
    json nodes = json::array();
    for (const auto& n : t.nodes) {
      if (n.is_leaf())
        nodes.push_back(json::array({-1, n.value}));
      else
        nodes.push_back(json::array({n.feature, n.threshold, n.left, n.right}));
    }
    trees.push_back(std::move(nodes));
  }
  static constexpr const char* agg[] = {"mean", "majority", "sum"};
  return {{"aggregation", agg[static_cast<int>(e.aggregation)]},
          {"num_features", e.num_features},
          {"trees", std::move(trees)}};
}

TreeEnsemble ensemble_from_json(const json& j) {
  TreeEnsemble e;
  const std::string agg = j.at("aggregation").get<std::string>();
  if (agg == "mean") e.aggregation = ForestAggregation::Mean;
  else if (agg == "majority") e.aggregation = ForestAggregation::Majority;
  else if (agg == "sum") e.aggregation = ForestAggregation::Sum;
  else fail(ErrorCode::ParseError, "unknown forest aggregation '" + agg + "'");
  e.num_features = j.at("num_features").get<int>();
  for (const auto& tj : j.at("trees")) {
    DecisionTree t;
    for (const auto& nj : tj) {
      TreeNode n;
      if (nj.at(0).get<int>() < 0) {
        n.value = nj.at(1).get<double>();
      } else {
        n.feature = nj.at(0).get<int>();
        n.threshold = nj.at(1).get<double>();
        n.left = nj.at(2).get<int>();
        n.right = nj.at(3).get<int>();
      }
      t.nodes.push_back(n);
    }
    if (t.nodes.empty()) fail(ErrorCode::ParseError, "tree without nodes");
    for (const auto& n : t.nodes)
      if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= static_cast<int>(t.nodes.size()) ||
                           n.right >= static_cast<int>(t.nodes.size())))
        fail(ErrorCode::ParseError, "tree node has an out-of-range child");
    e.trees.push_back(std::move(t));
  }
  return e;
}

json model_to_json(const std::string& id, const ModelPayload& m) {
  json j{{"format", "optbench-model/1"}, {"id", id}, {"kind", std::string(model_kind_name(m))}};
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, DenseMatrix>) {
          j["rows"] = p.rows;
          j["cols"] = p.cols;
          j["data"] = p.data;
        } else if constexpr (std::is_same_v<T, BiasVector>) {
          j["data"] = p.data;
        } else if constexpr (std::is_same_v<T, TreeEnsemble>) {
          j["forest"] = ensemble_to_json(p);
          j["num_trees"] = p.trees.size();
        } else if constexpr (std::is_same_v<T, KMeansModel>) {
          j["k"] = p.k;
          j["dim"] = p.dim;
          j["centroids"] = p.centroids;
        } else if constexpr (std::is_same_v<T, NaiveBayesModel>) {
          json vocab = json::object();
          for (const auto& [tok, ll] : p.log_likelihood) vocab[tok] = {ll[0], ll[1]};
          j["vocabulary"] = std::move(vocab);
          j["log_prior"] = {p.log_prior[0], p.log_prior[1]};
          j["unknown_log_prob"] = p.unknown_log_prob;
        } else if constexpr (std::is_same_v<T, ScalerModel>) {
          j["min"] = p.min;
          j["max"] = p.max;
        } else if constexpr (std::is_same_v<T, EncoderModel>) {
          j["categories"] = p.categories;
        } else {
          j["count"] = p.count;
          j["height"] = p.height;
          j["width"] = p.width;
          j["data"] = p.data;
        }
      },
      m);
  return j;
}

std::pair<std::string, ModelPayload> model_from_json(const json& j) {
  try {
    if (j.at("format") != "optbench-model/1") fail(ErrorCode::ParseError, "unsupported model format");
    const std::string id = j.at("id").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "matrix")
      return {id, DenseMatrix{j.at("rows").get<int>(), j.at("cols").get<int>(), j.at("data").get<std::vector<double>>()}};
    if (kind == "bias") return {id, BiasVector{j.at("data").get<std::vector<double>>()}};
    if (kind == "forest") {
      auto e = ensemble_from_json(j.at("forest"));
      if (j.contains("num_trees") && j["num_trees"].get<std::size_t>() != e.trees.size())
        fail(ErrorCode::ValidationError, "forest '" + id + "' tree count disagrees with num_trees");
      return {id, std::move(e)};
    }
    if (kind == "kmeans")
      return {id, KMeansModel{j.at("k").get<int>(), j.at("dim").get<int>(), j.at("centroids").get<std::vector<double>>()}};
    if (kind == "naive_bayes") {
      NaiveBayesModel nb;
      for (const auto& [tok, ll] : j.at("vocabulary").items()) nb.log_likelihood[tok] = {ll.at(0), ll.at(1)};
      nb.log_prior = {j.at("log_prior").at(0).get<double>(), j.at("log_prior").at(1).get<double>()};
      nb.unknown_log_prob = j.at("unknown_log_prob").get<double>();
      return {id, std::move(nb)};
    }
    if (kind == "scaler")
      return {id, ScalerModel{j.at("min").get<std::vector<double>>(), j.at("max").get<std::vector<double>>()}};
    if (kind == "encoder") return {id, EncoderModel{j.at("categories").get<std::vector<std::string>>()}};
    if (kind == "filter_bank")
      return {id, FilterBank{j.at("count").get<int>(), j.at("height").get<int>(), j.at("width").get<int>(),
                             j.at("data").get<std::vector<double>>()}};
    fail(ErrorCode::ParseError, "unknown model kind '" + kind + "'");
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseError, std::string("malformed model document: ") + e.what());
  }
}

ModelStore ModelStore::load_dir(const std::filesystem::path& dir) {
  ModelStore store;
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::IoError, "model directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      fail(ErrorCode::ParseError, f.string() + ": " + e.what());
    }
    auto [id, payload] = model_from_json(j);
    store.add(id, std::move(payload));
  }
  return store;
}

void ModelStore::save_dir(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& [id, m] : models_) {
    std::string file = id;
    std::replace(file.begin(), file.end(), '/', '_');
    std::ofstream out(dir / (file + ".json"));
    out << model_to_json(id, *m).dump() << '\n';
  }
}

}  // namespace optbench
