#include "katana/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "katana/io.hpp"
#include "katana/parallel.hpp"
#include "katana/rng.hpp"

namespace katana {

double gini(const std::vector<double>& class_counts) {
  double total = 0.0;
  for (double c : class_counts) {
    if (c < 0.0) throw std::invalid_argument("gini: negative count");
    total += c;
  }
  if (total <= 0.0) throw std::invalid_argument("gini: all counts are zero");
  double acc = 0.0;
  for (double c : class_counts) {
    const double p = c / total;
    acc += p * p;
  }
  return 1.0 - acc;
}

namespace {

struct SplitChoice {
  bool valid = false;
  double gain = -1.0;
  int feature = -1;
  float threshold = 0.0f;

  // Deterministic regardless of the order candidates are examined.
  bool better_than(const SplitChoice& o) const {
    if (!valid) return false;
    if (!o.valid) return true;
    if (gain != o.gain) return gain > o.gain;
    if (feature != o.feature) return feature < o.feature;
    return threshold < o.threshold;
  }
};

double gini_from_counts(const std::vector<int>& counts, int total) {
  double acc = 0.0;
  for (int c : counts) {
    const double p = static_cast<double>(c) / total;
    acc += p * p;
  }
  return 1.0 - acc;
}

struct TreeBuilder {
  const Matrix& X;
  const std::vector<int>& y;
  int classes;
  const ForestConfig& cfg;
  Rng rng;
  std::vector<TreeNode> nodes;
  std::vector<int> feature_order;          // scratch, reshuffled per node
  std::vector<std::pair<float, int>> vals; // scratch (value, label)

  TreeBuilder(const Matrix& x, const std::vector<int>& labels, int n_classes,
              const ForestConfig& c, Rng r)
      : X(x), y(labels), classes(n_classes), cfg(c), rng(r) {
    feature_order.resize(X.cols);
    std::iota(feature_order.begin(), feature_order.end(), 0);
  }

  int make_leaf(const std::vector<int>& counts) {
    TreeNode leaf;
    leaf.counts.assign(counts.begin(), counts.end());
    nodes.push_back(std::move(leaf));
    return static_cast<int>(nodes.size()) - 1;
  }

  SplitChoice scan_feature(const std::vector<int>& idx, int feature, double parent_gini) {
    const int n = static_cast<int>(idx.size());
    vals.clear();
    vals.reserve(n);
    for (int i : idx) vals.emplace_back(X.at(i, feature), y[i]);
    std::sort(vals.begin(), vals.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (vals.front().first == vals.back().first) return {};

    SplitChoice best;
    std::vector<int> left(classes, 0), right(classes, 0);
    for (const auto& [v, label] : vals) right[label]++;
    int nl = 0;
    for (int i = 0; i + 1 < n; ++i) {
      left[vals[i].second]++;
      right[vals[i].second]--;
      ++nl;
      if (vals[i].first == vals[i + 1].first) continue;
      const int nr = n - nl;
      if (nl < cfg.min_samples_leaf || nr < cfg.min_samples_leaf) continue;
      const double child =
          (nl * gini_from_counts(left, nl) + nr * gini_from_counts(right, nr)) / n;
      SplitChoice cand;
      cand.valid = true;
      cand.gain = parent_gini - child;
      cand.feature = feature;
      cand.threshold = 0.5f * (vals[i].first + vals[i + 1].first);
      if (cand.better_than(best)) best = cand;
    }
    return best;
  }

  int grow(std::vector<int>& idx, int depth) {
    std::vector<int> counts(classes, 0);
    for (int i : idx) counts[y[i]]++;
    int present = 0;
    for (int c : counts) present += c > 0;
    const bool depth_capped = cfg.max_depth > 0 && depth >= cfg.max_depth;
    if (present <= 1 || depth_capped ||
        static_cast<int>(idx.size()) < 2 * cfg.min_samples_leaf)
      return make_leaf(counts);

    const double parent_gini = gini_from_counts(counts, static_cast<int>(idx.size()));
    rng.shuffle(feature_order.begin(), feature_order.end());
    const int subset =
        std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(X.cols)))));

    // Zero-gain splits are allowed (a pure-gain requirement could never
    // memorize XOR-like data); scanning continues past the subset size only
    // while no feature has produced a valid split.
    SplitChoice best;
    int examined = 0, with_valid = 0;
    for (int feature : feature_order) {
      const SplitChoice cand = scan_feature(idx, feature, parent_gini);
      ++examined;
      if (cand.valid) {
        ++with_valid;
        if (cand.better_than(best)) best = cand;
      }
      if (examined >= subset && with_valid > 0) break;
    }
    if (!best.valid) return make_leaf(counts);

    std::vector<int> left_idx, right_idx;
    left_idx.reserve(idx.size());
    right_idx.reserve(idx.size());
    for (int i : idx)
      (X.at(i, best.feature) <= best.threshold ? left_idx : right_idx).push_back(i);

    const int node_id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    nodes[node_id].feature = best.feature;
    nodes[node_id].threshold = best.threshold;
    idx.clear();
    idx.shrink_to_fit();
    const int left = grow(left_idx, depth + 1);
    const int right = grow(right_idx, depth + 1);
    nodes[node_id].left = left;
    nodes[node_id].right = right;
    return node_id;
  }
};

}  // namespace

ForestModel::ForestModel(std::vector<Tree> trees, int n_features, int n_classes, ForestConfig cfg)
    : trees_(std::move(trees)), n_features_(n_features), n_classes_(n_classes), cfg_(cfg) {}

const TreeNode& tree_leaf(const Tree& tree, const float* x) {
  int node = 0;
  while (tree.nodes[node].feature >= 0) {
    const TreeNode& n = tree.nodes[node];
    node = x[n.feature] <= n.threshold ? n.left : n.right;
  }
  return tree.nodes[node];
}

Prediction ForestModel::predict(const float* x, int n_features) const {
  if (n_features != n_features_)
    throw std::invalid_argument("forest: expected " + std::to_string(n_features_) +
                                " features, got " + std::to_string(n_features));
  std::vector<double> probs(n_classes_, 0.0);
  for (const Tree& tree : trees_) {
    const TreeNode& leaf = tree_leaf(tree, x);
    double total = 0.0;
    for (float c : leaf.counts) total += c;
    for (int k = 0; k < n_classes_; ++k) probs[k] += leaf.counts[k] / total;
  }
  for (auto& p : probs) p /= static_cast<double>(trees_.size());
  int label = 0;
  for (int k = 1; k < n_classes_; ++k)
    if (probs[k] > probs[label]) label = k;
  return {label, std::move(probs)};
}

Prediction ForestModel::predict(const std::vector<float>& x) const {
  return predict(x.data(), static_cast<int>(x.size()));
}

ForestModel fit_forest(const Matrix& X, const std::vector<int>& y, const ForestConfig& cfg) {
  if (cfg.trees < 1) throw std::invalid_argument("fit_forest: tree count must be >= 1");
  if (X.rows != static_cast<int>(y.size()))
    throw std::invalid_argument("fit_forest: " + std::to_string(X.rows) + " rows vs " +
                                std::to_string(y.size()) + " labels");
  if (X.rows < 2) throw std::invalid_argument("fit_forest: need at least 2 samples");
  if (X.cols < 1) throw std::invalid_argument("fit_forest: feature dimension is zero");
  int classes = 0;
  for (int label : y) {
    if (label < 0) throw std::invalid_argument("fit_forest: negative label");
    classes = std::max(classes, label + 1);
  }
  std::vector<int> hist(classes, 0);
  for (int label : y) hist[label]++;
  int present = 0;
  for (int c : hist) present += c > 0;
  if (present < 2)
    throw std::invalid_argument("fit_forest: need at least 2 distinct classes, got " +
                                std::to_string(present));

  std::vector<Tree> trees(cfg.trees);
  parallel_for(cfg.trees, [&](long long t) {
    Rng tree_rng = Rng::stream(cfg.seed, static_cast<uint64_t>(t));
    std::vector<int> idx;
    if (cfg.bootstrap) {
      idx.resize(X.rows);
      for (auto& i : idx) i = tree_rng.uniform_int(0, X.rows - 1);
    } else {
      idx.resize(X.rows);
      std::iota(idx.begin(), idx.end(), 0);
    }
    TreeBuilder builder(X, y, classes, cfg, tree_rng);
    builder.grow(idx, 0);
    trees[t].nodes = std::move(builder.nodes);
  });
  return ForestModel(std::move(trees), X.cols, classes, cfg);
}

namespace {
constexpr char kForestMagic[4] = {'K', 'T', 'N', 'F'};
constexpr uint32_t kForestVersion = 1;
}  // namespace

void ForestModel::save(std::ostream& out) const {
  io::write_bytes(out, kForestMagic, 4);
  io::write_u32(out, kForestVersion);
  io::write_i32(out, n_features_);
  io::write_i32(out, n_classes_);
  io::write_i32(out, cfg_.trees);
  io::write_i32(out, cfg_.max_depth);
  io::write_i32(out, cfg_.min_samples_leaf);
  io::write_u32(out, cfg_.bootstrap ? 1 : 0);
  io::write_u64(out, cfg_.seed);
  io::write_u32(out, static_cast<uint32_t>(trees_.size()));
  for (const Tree& tree : trees_) {
    io::write_u32(out, static_cast<uint32_t>(tree.nodes.size()));
    for (const TreeNode& n : tree.nodes) {
      io::write_i32(out, n.feature);
      io::write_f32(out, n.threshold);
      io::write_i32(out, n.left);
      io::write_i32(out, n.right);
      io::write_u32(out, static_cast<uint32_t>(n.counts.size()));
      io::write_f32_vec(out, n.counts);
    }
  }
}

void ForestModel::save(const std::string& path) const {
  auto out = io::open_out(path);
  save(out);
}

ForestModel ForestModel::load(std::istream& in) {
  io::expect_magic(in, kForestMagic, "forest file");
  io::expect_version(in, kForestVersion, "forest file");
  ForestModel m;
  m.n_features_ = io::read_i32(in, "forest header");
  m.n_classes_ = io::read_i32(in, "forest header");
  m.cfg_.trees = io::read_i32(in, "forest header");
  m.cfg_.max_depth = io::read_i32(in, "forest header");
  m.cfg_.min_samples_leaf = io::read_i32(in, "forest header");
  m.cfg_.bootstrap = io::read_u32(in, "forest header") != 0;
  m.cfg_.seed = io::read_u64(in, "forest header");
  const uint32_t n_trees = io::read_u32(in, "forest header");
  m.trees_.resize(n_trees);
  for (auto& tree : m.trees_) {
    const uint32_t n_nodes = io::read_u32(in, "forest tree");
    tree.nodes.resize(n_nodes);
    for (auto& n : tree.nodes) {
      n.feature = io::read_i32(in, "forest node");
      n.threshold = io::read_f32(in, "forest node");
      n.left = io::read_i32(in, "forest node");
      n.right = io::read_i32(in, "forest node");
      const uint32_t n_counts = io::read_u32(in, "forest node");
      io::read_f32_vec(in, n.counts, n_counts, "forest node counts");
    }
  }
  return m;
}

ForestModel ForestModel::load(const std::string& path) {
  auto in = io::open_in(path);
  return load(in);
}

// ---------------------------------------------------------------------------
// logistic regression (one-vs-rest, full-batch gradient descent)
// ---------------------------------------------------------------------------

LinearHead fit_logreg(const Matrix& X, const std::vector<int>& y, float l2, int epochs, float lr,
                      uint64_t seed) {
  (void)seed;  // training is full-batch and order-free; kept for API symmetry
  if (X.rows != static_cast<int>(y.size()))
    throw std::invalid_argument("fit_logreg: rows vs labels mismatch");
  if (X.rows < 2) throw std::invalid_argument("fit_logreg: need at least 2 samples");
  if (X.cols < 1) throw std::invalid_argument("fit_logreg: feature dimension is zero");
  int classes = 0;
  for (int label : y) classes = std::max(classes, label + 1);
  std::vector<int> hist(classes, 0);
  for (int label : y) hist[label]++;
  int present = 0;
  for (int c : hist) present += c > 0;
  if (present < 2) throw std::invalid_argument("fit_logreg: need at least 2 distinct classes");

  LinearHead head;
  head.classes = classes;
  head.weights = Matrix(classes, X.cols);
  head.bias.assign(classes, 0.0f);

  const int n = X.rows, d = X.cols;
  parallel_for(classes, [&](long long c) {
    std::vector<double> w(d, 0.0);
    double b = 0.0;
    std::vector<double> grad(d);
    double prev_loss = 1e300;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      std::fill(grad.begin(), grad.end(), 0.0);
      double gb = 0.0, loss = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* row = X.row(i);
        double z = b;
        for (int j = 0; j < d; ++j) z += w[j] * row[j];
        const double p = 1.0 / (1.0 + std::exp(-z));
        const double target = y[i] == static_cast<int>(c) ? 1.0 : 0.0;
        const double err = p - target;
        for (int j = 0; j < d; ++j) grad[j] += err * row[j];
        gb += err;
        const double pc = std::min(std::max(target > 0.5 ? p : 1.0 - p, 1e-12), 1.0);
        loss -= std::log(pc);
      }
      for (int j = 0; j < d; ++j) w[j] -= lr * (grad[j] / n + l2 * w[j]);
      b -= lr * gb / n;
      loss /= n;
      if (std::abs(prev_loss - loss) < 1e-10) break;  // plateau
      prev_loss = loss;
    }
    for (int j = 0; j < d; ++j) head.weights.at(static_cast<int>(c), j) = static_cast<float>(w[j]);
    head.bias[c] = static_cast<float>(b);
  });
  return head;
}

Prediction linear_predict(const LinearHead& head, const float* x, int n_features) {
  if (n_features != head.weights.cols)
    throw std::invalid_argument("linear_predict: expected " + std::to_string(head.weights.cols) +
                                " features, got " + std::to_string(n_features));
  Prediction pred;
  pred.probs.resize(head.classes);
  for (int c = 0; c < head.classes; ++c) {
    double z = head.bias[c];
    const float* row = head.weights.row(c);
    for (int j = 0; j < head.weights.cols; ++j) z += static_cast<double>(row[j]) * x[j];
    pred.probs[c] = 1.0 / (1.0 + std::exp(-z));
  }
  pred.label = 0;
  for (int c = 1; c < head.classes; ++c)
    if (pred.probs[c] > pred.probs[pred.label]) pred.label = c;
  return pred;
}

Prediction linear_predict(const LinearHead& head, const std::vector<float>& x) {
  return linear_predict(head, x.data(), static_cast<int>(x.size()));
}

namespace {
constexpr char kLinearMagic[4] = {'K', 'T', 'N', 'L'};
constexpr uint32_t kLinearVersion = 1;
}  // namespace

void LinearHead::save(std::ostream& out) const {
  io::write_bytes(out, kLinearMagic, 4);
  io::write_u32(out, kLinearVersion);
  io::write_i32(out, classes);
  io::write_i32(out, weights.cols);
  io::write_f32_vec(out, weights.data);
  io::write_f32_vec(out, bias);
}

LinearHead LinearHead::load(std::istream& in) {
  io::expect_magic(in, kLinearMagic, "linear head file");
  io::expect_version(in, kLinearVersion, "linear head file");
  LinearHead head;
  head.classes = io::read_i32(in, "linear head");
  const int cols = io::read_i32(in, "linear head");
  head.weights = Matrix(head.classes, cols);
  io::read_f32_vec(in, head.weights.data, static_cast<size_t>(head.classes) * cols,
                   "linear head weights");
  io::read_f32_vec(in, head.bias, head.classes, "linear head bias");
  return head;
}

}  // namespace katana
