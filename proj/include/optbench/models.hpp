#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "optbench/value.hpp"

namespace optbench {

/// Row-major weight matrix W of an affine layer XW + b.
struct DenseMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

struct BiasVector {
  std::vector<double> data;
};

/// Internal node when feature >= 0: go left iff x[feature] <= threshold.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
  friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(const std::vector<double>& x) const;
  int depth() const;
  friend bool operator==(const DecisionTree&, const DecisionTree&) = default;
};

enum class ForestAggregation { Mean, Majority, Sum };

/// A decision tree is stored as a one-tree ensemble.
struct TreeEnsemble {
  std::vector<DecisionTree> trees;
  ForestAggregation aggregation = ForestAggregation::Mean;
  int num_features = 0;

  double predict(const std::vector<double>& x) const;
  std::size_t node_count() const;
  friend bool operator==(const TreeEnsemble&, const TreeEnsemble&) = default;
};

struct KMeansModel {
  int k = 0;
  int dim = 0;
  std::vector<double> centroids;  // k x dim row-major
};

/// Two-class multinomial naive Bayes; class 1 is the positive (spam) class.
struct NaiveBayesModel {
  std::map<std::string, std::array<double, 2>> log_likelihood;
  std::array<double, 2> log_prior{};
  double unknown_log_prob = -20.0;
};

struct ScalerModel {
  std::vector<double> min;
  std::vector<double> max;
};

/// Categories are matched against the cell's textual form (ints print base 10).
struct EncoderModel {
  std::vector<std::string> categories;
};

/// count filters of height x width, stored filter-major then row-major.
struct FilterBank {
  int count = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;
  double at(int f, int r, int c) const {
    return data[(static_cast<std::size_t>(f) * height + r) * width + c];
  }
};

using ModelPayload = std::variant<DenseMatrix, BiasVector, TreeEnsemble, KMeansModel, NaiveBayesModel,
                                  ScalerModel, EncoderModel, FilterBank>;

std::string_view model_kind_name(const ModelPayload& m);

/// Most frequent value; ties resolve to the largest value.
double majority_of(const std::vector<double>& values);

class ModelStore {
 public:
  void add(const std::string& id, ModelPayload payload);
  bool contains(const std::string& id) const { return models_.count(id) != 0; }
  const ModelPayload& get(const std::string& id) const;  // throws UnknownModel
  std::vector<std::string> ids() const;
  std::size_t size() const { return models_.size(); }

  template <typename T>
  const T& get_as(const std::string& id) const {
    const auto& m = get(id);
    if (auto* p = std::get_if<T>(&m)) return *p;
    fail(ErrorCode::UnknownModel, "model '" + id + "' has kind " + std::string(model_kind_name(m)));
  }

  /// Loads every `*.json` model document (format optbench-model/1) from a directory.
  static ModelStore load_dir(const std::filesystem::path& dir);
  void save_dir(const std::filesystem::path& dir) const;

 private:
  std::map<std::string, std::shared_ptr<const ModelPayload>> models_;
};

nlohmann::json model_to_json(const std::string& id, const ModelPayload& m);
std::pair<std::string, ModelPayload> model_from_json(const nlohmann::json& j);

nlohmann::json ensemble_to_json(const TreeEnsemble& e);
TreeEnsemble ensemble_from_json(const nlohmann::json& j);

}  // namespace optbench
