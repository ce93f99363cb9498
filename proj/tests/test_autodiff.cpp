#include <cmath>
#include <vector>

#include "doctest.h"
#include "katana/autodiff.hpp"
#include "katana/rng.hpp"

using namespace katana;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace

TEST_CASE("scalar square: value and gradient") {
  Graph<double> g;
  const int x = g.add_input({1});
  const int y = g.mul(x, x);
  Tape<double> tape;
  const Tensor<double> x3 = Tensor<double>::scalar(3.0);
  CHECK(forward(g, y, {{x, &x3}}, -1, tape).data[0] == doctest::Approx(9.0));
  const Tensor<double> grad = grad_input(g, x, tape);
  CHECK(grad.data[0] == doctest::Approx(6.0));
}

TEST_CASE("relu forward") {
  Graph<float> g;
  const int x = g.add_input({2});
  const int y = g.relu(x);
  Tape<float> tape;
  const Tensor<float> in({2}, {-1.0f, 2.0f});
  const auto& out = forward(g, y, {{x, &in}}, -1, tape);
  CHECK(out.data[0] == 0.0f);
  CHECK(out.data[1] == 2.0f);
}

TEST_CASE("softmax cross-entropy of uniform logits is ln 2; gradient is softmax minus onehot") {
  Graph<double> g;
  const int x = g.add_input({2});
  const int loss = g.softmax_cross_entropy(x);
  Tape<double> tape;
  const Tensor<double> logits({2}, {0.0, 0.0});
  CHECK(forward(g, loss, {{x, &logits}}, 0, tape).data[0] == doctest::Approx(std::log(2.0)));
  const Tensor<double> grad = grad_input(g, x, tape);
  CHECK(grad.data[0] == doctest::Approx(0.5 - 1.0));
  CHECK(grad.data[1] == doctest::Approx(0.5));
}

TEST_CASE("forward errors") {
  Graph<float> g;
  const int x = g.add_input({2, 2, 1});
  const int w = g.add_param(Tensor<float>({3, 3, 1, 2}));
  const int b = g.add_param(Tensor<float>({2}));
  const int c = g.conv2d(x, w, b);
  Tape<float> tape;

  SUBCASE("shape mismatch names the node") {
    const Tensor<float> bad({2, 2, 2});
    CHECK_THROWS_WITH_AS(forward(g, c, {{x, &bad}}, -1, tape),
                         doctest::Contains("input node"), std::invalid_argument);
  }
  SUBCASE("backward before forward") {
    CHECK_THROWS_AS(backward(g, tape), std::logic_error);
    CHECK_THROWS_AS(grad_input(g, x, tape), std::logic_error);
  }
  SUBCASE("conv channel mismatch at construction") {
    Graph<float> h;
    const int xi = h.add_input({2, 2, 3});
    const int wi = h.add_param(Tensor<float>({3, 3, 1, 2}));
    const int bi = h.add_param(Tensor<float>({2}));
    CHECK_THROWS_WITH_AS(h.conv2d(xi, wi, bi), doctest::Contains("conv2d"),
                         std::invalid_argument);
  }
}

TEST_CASE("conv2d input gradient matches central finite differences") {
  Rng rng(2024);
  Graph<double> g;
  const int x = g.add_input({4, 4, 1});
  const int w = g.add_param(random_tensor<double>({3, 3, 1, 2}, rng));
  const int b = g.add_param(random_tensor<double>({2}, rng));
  const int conv = g.conv2d(x, w, b);
  const int act = g.relu(conv);
  const int pooled = g.global_avg_pool(act);
  const int loss = g.softmax_cross_entropy(pooled);

  const Tensor<double> img = random_tensor<double>({4, 4, 1}, rng, 0.0, 1.0);
  const auto rep = finite_diff_check(g, loss, x, img, 1, 1e-3);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("finite differences on every node type") {
  Rng rng(7);
  // conv -> relu -> avg_pool2 -> conv -> add/mul mix -> gap -> dense -> sce
  Graph<double> g;
  const int x = g.add_input({4, 4, 2});
  const int w1 = g.add_param(random_tensor<double>({3, 3, 2, 3}, rng));
  const int b1 = g.add_param(random_tensor<double>({3}, rng));
  const int c1 = g.conv2d(x, w1, b1);
  const int r1 = g.relu(c1);
  const int p1 = g.avg_pool2(r1);
  const int w2 = g.add_param(random_tensor<double>({3, 3, 3, 3}, rng));
  const int b2 = g.add_param(random_tensor<double>({3}, rng));
  const int c2 = g.conv2d(p1, w2, b2);
  const int mixed = g.mul(g.add(c2, c2), c2);
  const int gap = g.global_avg_pool(mixed);
  const int wd = g.add_param(random_tensor<double>({3, 4}, rng));
  const int bd = g.add_param(random_tensor<double>({4}, rng));
  const int logits = g.dense(gap, wd, bd);
  const int loss = g.softmax_cross_entropy(logits);

  const Tensor<double> img = random_tensor<double>({4, 4, 2}, rng, 0.1, 0.9);
  const auto rep = finite_diff_check(g, loss, x, img, 2, 1e-3);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("finite_diff_check on quadratic is exact to rounding") {
  Graph<double> g;
  const int x = g.add_input({1});
  const int y = g.mul(x, x);
  const Tensor<double> at = Tensor<double>::scalar(1.5);
  const auto rep = finite_diff_check(g, y, x, at, -1, 1e-4);
  CHECK(rep.checked == 1);
  CHECK(rep.excluded == 0);
  CHECK(rep.max_rel_error < 1e-6);
}

TEST_CASE("finite_diff_check on a 2-layer dense net") {
  Rng rng(11);
  Graph<double> g;
  const int x = g.add_input({8});
  const int w1 = g.add_param(random_tensor<double>({8, 6}, rng));
  const int b1 = g.add_param(random_tensor<double>({6}, rng));
  const int h1 = g.relu(g.dense(x, w1, b1));
  const int w2 = g.add_param(random_tensor<double>({6, 3}, rng));
  const int b2 = g.add_param(random_tensor<double>({3}, rng));
  const int loss = g.softmax_cross_entropy(g.dense(h1, w2, b2));

  const Tensor<double> in = random_tensor<double>({8}, rng);
  const auto rep = finite_diff_check(g, loss, x, in, 0, 1e-4);
  CHECK(rep.checked > 0);
  CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("relu pre-activation exactly at zero is excluded") {
  Graph<double> g;
  const int x = g.add_input({1, 1, 2});
  const int r = g.relu(x);
  const int gap = g.global_avg_pool(r);
  const int loss = g.softmax_cross_entropy(gap);
  const Tensor<double> at({1, 1, 2}, {0.0, 0.5});
  const auto rep = finite_diff_check(g, loss, x, at, 0, 1e-3);
  CHECK(rep.excluded == 1);
  CHECK(rep.checked == 1);
}

TEST_CASE("gradient of a sum of losses is the sum of gradients") {
  Rng rng(13);
  Graph<double> g;
  const int x = g.add_input({4});
  const int w = g.add_param(random_tensor<double>({4, 3}, rng));
  const int b = g.add_param(random_tensor<double>({3}, rng));
  const int loss = g.softmax_cross_entropy(g.dense(x, w, b));

  const Tensor<double> in = random_tensor<double>({4}, rng);
  std::vector<double> summed(4, 0.0);
  for (int label = 0; label < 3; ++label) {
    Tape<double> tape;
    forward(g, loss, {{x, &in}}, label, tape);
    const auto grad = grad_input(g, x, tape);
    for (int i = 0; i < 4; ++i) summed[i] += grad.data[i];
  }
  // same three losses expressed as repeated backward accumulation
  for (int i = 0; i < 4; ++i) {
    double acc = 0.0;
    for (int label = 0; label < 3; ++label) {
      Tape<double> tape;
      forward(g, loss, {{x, &in}}, label, tape);
      acc += grad_input(g, x, tape).data[i];
    }
    CHECK(acc == doctest::Approx(summed[i]).epsilon(1e-12));
  }
}

TEST_CASE("forward is deterministic") {
  Rng rng(5);
  Graph<float> g;
  const int x = g.add_input({4, 4, 1});
  const int w = g.add_param(random_tensor<float>({3, 3, 1, 4}, rng));
  const int b = g.add_param(random_tensor<float>({4}, rng));
  const int out = g.global_avg_pool(g.relu(g.conv2d(x, w, b)));
  const Tensor<float> img = random_tensor<float>({4, 4, 1}, rng);
  Tape<float> t1, t2;
  const auto& o1 = forward(g, out, {{x, &img}}, -1, t1);
  const auto& o2 = forward(g, out, {{x, &img}}, -1, t2);
  CHECK(o1.data == o2.data);
}
