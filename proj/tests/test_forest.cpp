#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "katana/forest.hpp"
#include "katana/rng.hpp"

using namespace katana;

namespace {

Matrix make_matrix(int rows, int cols, const std::vector<float>& values) {
  Matrix m(rows, cols);
  m.data = values;
  return m;
}

// 2D XOR: class = parity of the quadrant.
void xor_data(Matrix& X, std::vector<int>& y) {
  X = make_matrix(4, 2, {0, 0, 0, 1, 1, 0, 1, 1});
  y = {0, 1, 1, 0};
}

double train_accuracy(const ForestModel& m, const Matrix& X, const std::vector<int>& y) {
  int hits = 0;
  for (int i = 0; i < X.rows; ++i)
    hits += m.predict(X.row(i), X.cols).label == y[i];
  return static_cast<double>(hits) / X.rows;
}

}  // namespace

TEST_CASE("gini closed forms") {
  CHECK(gini({5, 5}) == doctest::Approx(0.5));
  CHECK(gini({10, 0}) == doctest::Approx(0.0));
  CHECK(gini({1, 1, 1, 1}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(gini({0, 0}), std::invalid_argument);
  CHECK_THROWS_AS(gini({-1, 2}), std::invalid_argument);
}

TEST_CASE("gini is maximal for the uniform distribution over present classes") {
  const double uniform = gini({3, 3, 3});
  CHECK(gini({4, 3, 2}) < uniform);
  CHECK(gini({9, 0, 0}) < uniform);
  CHECK(gini({1, 8, 0}) < uniform);
}

TEST_CASE("XOR is memorized with zero-gain splits allowed") {
  Matrix X;
  std::vector<int> y;
  xor_data(X, y);
  ForestConfig cfg;
  cfg.trees = 50;
  cfg.bootstrap = false;
  cfg.seed = 3;
  const ForestModel m = fit_forest(X, y, cfg);
  CHECK(train_accuracy(m, X, y) == doctest::Approx(1.0));
}

TEST_CASE("bootstrap-off unlimited-depth forest memorizes consistent data") {
  Rng rng(21);
  const int n = 60, d = 5;
  Matrix X(n, d);
  for (auto& v : X.data) v = static_cast<float>(rng.uniform());
  std::vector<int> y(n);
  for (auto& label : y) label = rng.uniform_int(0, 2);
  ForestConfig cfg;
  cfg.trees = 10;
  cfg.bootstrap = false;
  cfg.seed = 4;
  const ForestModel m = fit_forest(X, y, cfg);
  CHECK(train_accuracy(m, X, y) == doctest::Approx(1.0));
}

TEST_CASE("degenerate inputs are rejected with structured errors") {
  Matrix X = make_matrix(3, 1, {0.f, 1.f, 2.f});
  CHECK_THROWS_WITH_AS(fit_forest(X, {0, 0, 0}, {}), doctest::Contains("distinct classes"),
                       std::invalid_argument);
  CHECK_THROWS_AS(fit_forest(X, {0, 1}, {}), std::invalid_argument);
  CHECK_THROWS_AS(fit_forest(Matrix(3, 0), {0, 1, 0}, {}), std::invalid_argument);
}

TEST_CASE("forest of identical single-leaf trees averages the leaf distribution") {
  Tree leaf_tree;
  TreeNode leaf;
  leaf.counts = {3.0f, 1.0f};
  leaf_tree.nodes.push_back(leaf);
  const ForestModel m({leaf_tree, leaf_tree, leaf_tree}, 2, 2);
  const Prediction p = m.predict({0.5f, 0.5f});
  CHECK(p.label == 0);
  CHECK(p.probs[0] == doctest::Approx(0.75));
  CHECK(p.probs[1] == doctest::Approx(0.25));
}

TEST_CASE("1-tree forest equals direct tree evaluation on exhaustive depth<=3 trees") {
  // Hand-built trees over 2 features; inputs on a grid cover every leaf.
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Tree tree;
    // root and two levels of children, randomized thresholds
    auto add_split = [&](int feature, float thr, int left, int right) {
      TreeNode n;
      n.feature = feature;
      n.threshold = thr;
      n.left = left;
      n.right = right;
      tree.nodes.push_back(n);
      return static_cast<int>(tree.nodes.size()) - 1;
    };
    auto add_leaf = [&](float a, float b) {
      TreeNode n;
      n.counts = {a, b};
      tree.nodes.push_back(n);
      return static_cast<int>(tree.nodes.size()) - 1;
    };
    tree.nodes.reserve(16);
    add_split(0, static_cast<float>(rng.uniform()), 1, 4);
    add_split(1, static_cast<float>(rng.uniform()), 2, 3);
    add_leaf(1 + 3 * static_cast<float>(rng.uniform()), 1.0f);
    add_leaf(1.0f, 1 + 3 * static_cast<float>(rng.uniform()));
    tree.nodes[0].right = add_split(1, static_cast<float>(rng.uniform()), 5, 6);
    add_leaf(2.0f, 1 + static_cast<float>(rng.uniform()));
    add_leaf(1 + static_cast<float>(rng.uniform()), 2.0f);

    const ForestModel m({tree}, 2, 2);
    for (float x0 = 0.05f; x0 < 1.0f; x0 += 0.1f)
      for (float x1 = 0.05f; x1 < 1.0f; x1 += 0.1f) {
        const std::vector<float> x{x0, x1};
        const TreeNode& leaf = tree_leaf(tree, x.data());
        const float total = leaf.counts[0] + leaf.counts[1];
        const Prediction p = m.predict(x);
        CHECK(p.probs[0] == doctest::Approx(leaf.counts[0] / total));
        CHECK(p.probs[1] == doctest::Approx(leaf.counts[1] / total));
      }
  }
}

TEST_CASE("probabilities sum to one") {
  Rng rng(6);
  Matrix X(40, 3);
  for (auto& v : X.data) v = static_cast<float>(rng.uniform());
  std::vector<int> y(40);
  for (auto& label : y) label = rng.uniform_int(0, 3);
  ForestConfig cfg;
  cfg.trees = 25;
  cfg.seed = 7;
  const ForestModel m = fit_forest(X, y, cfg);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> x{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                         static_cast<float>(rng.uniform())};
    const Prediction p = m.predict(x);
    double sum = 0.0;
    for (double q : p.probs) sum += q;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("first T trees are shared between forests of size T and T+1") {
  Rng rng(8);
  Matrix X(30, 4);
  for (auto& v : X.data) v = static_cast<float>(rng.uniform());
  std::vector<int> y(30);
  for (auto& label : y) label = rng.uniform_int(0, 1);
  ForestConfig small, big;
  small.trees = 5;
  big.trees = 6;
  small.seed = big.seed = 99;
  const ForestModel a = fit_forest(X, y, small);
  const ForestModel b = fit_forest(X, y, big);
  REQUIRE(a.trees().size() == 5);
  REQUIRE(b.trees().size() == 6);
  for (int t = 0; t < 5; ++t) {
    const auto& ta = a.trees()[t].nodes;
    const auto& tb = b.trees()[t].nodes;
    REQUIRE(ta.size() == tb.size());
    for (size_t i = 0; i < ta.size(); ++i) {
      CHECK(ta[i].feature == tb[i].feature);
      CHECK(ta[i].threshold == tb[i].threshold);
      CHECK(ta[i].counts == tb[i].counts);
    }
  }
}

TEST_CASE("duplicating every row leaves bootstrap-off splits unchanged") {
  Rng rng(9);
  Matrix X(20, 3);
  for (auto& v : X.data) v = static_cast<float>(rng.uniform());
  std::vector<int> y(20);
  for (auto& label : y) label = rng.uniform_int(0, 2);

  Matrix X2(40, 3);
  std::vector<int> y2(40);
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 3; ++j) {
      X2.at(i, j) = X.at(i, j);
      X2.at(20 + i, j) = X.at(i, j);
    }
    y2[i] = y[i];
    y2[20 + i] = y[i];
  }
  ForestConfig cfg;
  cfg.trees = 8;
  cfg.bootstrap = false;
  cfg.seed = 12;
  const ForestModel a = fit_forest(X, y, cfg);
  const ForestModel b = fit_forest(X2, y2, cfg);
  Rng probe(10);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> x{static_cast<float>(probe.uniform()), static_cast<float>(probe.uniform()),
                         static_cast<float>(probe.uniform())};
    CHECK(a.predict(x).label == b.predict(x).label);
  }
}

TEST_CASE("forest round-trips through its file format") {
  Rng rng(13);
  Matrix X(25, 3);
  for (auto& v : X.data) v = static_cast<float>(rng.uniform());
  std::vector<int> y(25);
  for (auto& label : y) label = rng.uniform_int(0, 2);
  ForestConfig cfg;
  cfg.trees = 7;
  cfg.seed = 14;
  const ForestModel m = fit_forest(X, y, cfg);

  std::stringstream buf;
  m.save(buf);
  const ForestModel loaded = ForestModel::load(buf);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> x{static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
                         static_cast<float>(rng.uniform())};
    const Prediction pa = m.predict(x);
    const Prediction pb = loaded.predict(x);
    CHECK(pa.label == pb.label);
    CHECK(pa.probs == pb.probs);
  }

  std::stringstream bad("XXXX????");
  CHECK_THROWS_WITH_AS(ForestModel::load(bad), doctest::Contains("magic"), std::runtime_error);
}

TEST_CASE("logistic regression separates a separable set") {
  Rng rng(15);
  const int n = 40;
  Matrix X(n, 2);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    X.at(i, 0) = static_cast<float>(rng.uniform() + (label ? 2.0 : 0.0));
    X.at(i, 1) = static_cast<float>(rng.uniform());
    y[i] = label;
  }
  const LinearHead head = fit_logreg(X, y, 0.0f, 500, 0.5f, 1);
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += linear_predict(head, X.row(i), 2).label == y[i];
  CHECK(hits == n);
}

TEST_CASE("huge l2 drives weights toward zero") {
  Rng rng(16);
  Matrix X(20, 2);
  std::vector<int> y(20);
  for (int i = 0; i < 20; ++i) {
    X.at(i, 0) = static_cast<float>(rng.uniform());
    X.at(i, 1) = static_cast<float>(rng.uniform());
    y[i] = i % 2;
  }
  const LinearHead strong = fit_logreg(X, y, 100.0f, 300, 0.005f, 1);
  const LinearHead weak = fit_logreg(X, y, 0.0f, 300, 0.005f, 1);
  auto norm = [](const LinearHead& h) {
    double s = 0.0;
    for (float w : h.weights.data) s += static_cast<double>(w) * w;
    return std::sqrt(s);
  };
  CHECK(norm(strong) < 0.05 * std::max(norm(weak), 1e-6));
}

TEST_CASE("fit_logreg is deterministic") {
  Rng rng(17);
  Matrix X(20, 2);
  std::vector<int> y(20);
  for (int i = 0; i < 20; ++i) {
    X.at(i, 0) = static_cast<float>(rng.uniform());
    X.at(i, 1) = static_cast<float>(rng.uniform());
    y[i] = i % 3;
  }
  const LinearHead a = fit_logreg(X, y, 0.01f, 100, 0.2f, 7);
  const LinearHead b = fit_logreg(X, y, 0.01f, 100, 0.2f, 7);
  CHECK(a.weights.data == b.weights.data);
  CHECK(a.bias == b.bias);
}

TEST_CASE("linear_predict matches a brute-force evaluation") {
  Rng rng(18);
  LinearHead head;
  head.classes = 3;
  head.weights = Matrix(3, 4);
  for (auto& w : head.weights.data) w = static_cast<float>(rng.uniform(-1, 1));
  head.bias = {0.1f, -0.2f, 0.3f};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> x(4);
    for (auto& v : x) v = static_cast<float>(rng.uniform(-1, 1));
    const Prediction p = linear_predict(head, x);
    for (int c = 0; c < 3; ++c) {
      double z = head.bias[c];
      for (int j = 0; j < 4; ++j) z += static_cast<double>(head.weights.at(c, j)) * x[j];
      CHECK(p.probs[c] == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero head scores 0.5 everywhere and picks class 0") {
  LinearHead head;
  head.classes = 3;
  head.weights = Matrix(3, 2);
  head.bias = {0, 0, 0};
  const Prediction p = linear_predict(head, {0.4f, 0.6f});
  CHECK(p.label == 0);
  for (double q : p.probs) CHECK(q == doctest::Approx(0.5));
}

TEST_CASE("scaling inputs preserves score ordering with zero biases") {
  Rng rng(19);
  LinearHead head;
  head.classes = 4;
  head.weights = Matrix(4, 3);
  for (auto& w : head.weights.data) w = static_cast<float>(rng.uniform(-1, 1));
  head.bias = {0, 0, 0, 0};
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<float> x(3), x2(3);
    for (int j = 0; j < 3; ++j) {
      x[j] = static_cast<float>(rng.uniform(-1, 1));
      x2[j] = 2.0f * x[j];
    }
    const Prediction a = linear_predict(head, x);
    const Prediction b = linear_predict(head, x2);
    for (int c = 0; c < 4; ++c)
      for (int d = 0; d < 4; ++d)
        if (a.probs[c] > a.probs[d]) CHECK(b.probs[c] >= b.probs[d]);
  }
}
