#pragma once

// Random forest on the Gini criterion, grown from scratch, plus a one-vs-rest
// logistic-regression head. Trees are grown in parallel with per-tree seed
// streams, so parallel and serial fits produce identical models.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "katana/tensor.hpp"

namespace katana {

struct ForestConfig {
  int trees = 1000;
  int max_depth = 0;  // 0 = unlimited
  int min_samples_leaf = 1;
  bool bootstrap = true;
  uint64_t seed = 0;
};

// Internal node when feature >= 0 (x[feature] <= threshold goes left),
// otherwise a leaf holding per-class sample counts.
struct TreeNode {
  int feature = -1;
  float threshold = 0.0f;
  int left = -1;
  int right = -1;
  std::vector<float> counts;
};

struct Tree {
  std::vector<TreeNode> nodes;
};

struct Prediction {
  int label = 0;
  std::vector<double> probs;
};

double gini(const std::vector<double>& class_counts);

class ForestModel {
 public:
  ForestModel() = default;
  ForestModel(std::vector<Tree> trees, int n_features, int n_classes, ForestConfig cfg = {});

  Prediction predict(const float* x, int n_features) const;
  Prediction predict(const std::vector<float>& x) const;

  int n_features() const { return n_features_; }
  int n_classes() const { return n_classes_; }
  const std::vector<Tree>& trees() const { return trees_; }
  const ForestConfig& config() const { return cfg_; }

  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static ForestModel load(std::istream& in);
  static ForestModel load(const std::string& path);

 private:
  std::vector<Tree> trees_;
  int n_features_ = 0;
  int n_classes_ = 0;
  ForestConfig cfg_;
};

ForestModel fit_forest(const Matrix& X, const std::vector<int>& y, const ForestConfig& cfg);

inline Prediction forest_predict(const ForestModel& model, const std::vector<float>& x) {
  return model.predict(x);
}

// Walks one tree; test oracle against ForestModel::predict on 1-tree forests.
const TreeNode& tree_leaf(const Tree& tree, const float* x);

struct LinearHead {
  Matrix weights;  // classes x features
  std::vector<float> bias;
  int classes = 0;

  void save(std::ostream& out) const;
  static LinearHead load(std::istream& in);
};

LinearHead fit_logreg(const Matrix& X, const std::vector<int>& y, float l2, int epochs, float lr,
                      uint64_t seed);

Prediction linear_predict(const LinearHead& head, const float* x, int n_features);
Prediction linear_predict(const LinearHead& head, const std::vector<float>& x);

}  // namespace katana
