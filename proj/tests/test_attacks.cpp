#include <cmath>

#include "doctest.h"
#include "katana/attacks.hpp"
#include "katana/rng.hpp"

using namespace katana;

namespace {

ModelConfig micro_cfg(int classes = 2) {
  ModelConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.channels = 3;
  cfg.classes = classes;
  cfg.conv_widths = {4};
  cfg.embed_dim = 6;
  cfg.seed = 21;
  return cfg;
}

TrainedModel micro_model(int classes = 2) {
  return TrainedModel(micro_cfg(classes), init_weights(micro_cfg(classes)), {});
}

Image random_image(int h, int w, int c, uint64_t seed) {
  Image img({h, w, c});
  Rng rng(seed);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

float linf_distance(const Image& a, const Image& b) {
  float m = 0.0f;
  for (long long i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_CASE("projection: clamp mode clips coordinates") {
  const Tensor<float> delta({2}, {0.05f, -0.01f});
  const Tensor<float> out = project(delta, 0.031f, ProjectionMode::kClamp);
  CHECK(out.data[0] == 0.031f);
  CHECK(out.data[1] == -0.01f);
}

TEST_CASE("projection: radial mode rescales the whole map") {
  const Tensor<float> delta({2}, {0.05f, -0.01f});
  const Tensor<float> out = project(delta, 0.031f, ProjectionMode::kRadial);
  CHECK(out.data[0] == doctest::Approx(0.031f).epsilon(1e-6));
  CHECK(out.data[1] == doctest::Approx(-0.0062f).epsilon(1e-5));  // scaled by 0.62
}

TEST_CASE("projection leaves in-ball perturbations unchanged") {
  const Tensor<float> delta({3}, {0.01f, -0.02f, 0.0f});
  CHECK(project(delta, 0.031f, ProjectionMode::kClamp).data == delta.data);
  CHECK(project(delta, 0.031f, ProjectionMode::kRadial).data == delta.data);
}

TEST_CASE("projection is idempotent in both modes") {
  Rng rng(33);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor<float> delta({16});
    for (auto& v : delta.data) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    const float eps = static_cast<float>(rng.uniform(0.001, 0.1));
    for (ProjectionMode mode : {ProjectionMode::kClamp, ProjectionMode::kRadial}) {
      const Tensor<float> once = project(delta, eps, mode);
      const Tensor<float> twice = project(once, eps, mode);
      CHECK(once.data == twice.data);
      float norm = 0.0f;
      for (float v : once.data) norm = std::max(norm, std::abs(v));
      CHECK(norm <= eps);
    }
  }
}

TEST_CASE("fgsm on a hand-computed single-logit pixel model") {
  // dense 1->2 with weights (-1, +1): J = -log softmax_0, dJ/dx = p1 * 2 > 0
  ModelConfig cfg;
  cfg.height = 2;
  cfg.width = 2;
  cfg.channels = 1;
  cfg.classes = 2;
  cfg.conv_widths = {1};
  cfg.embed_dim = 1;
  // hand-set weights: identity-ish conv, embedding passthrough
  auto weights = init_weights(cfg);
  // conv 3x3x1x1: delta kernel
  weights[0].fill(0.0f);
  weights[0].data[4] = 1.0f;
  weights[1].fill(0.0f);
  weights[2].fill(0.0f);
  weights[2].data[4] = 1.0f;
  weights[3].fill(0.0f);
  weights[4] = Tensor<float>({1, 1}, {1.0f});   // embedding dense
  weights[5] = Tensor<float>({1}, {0.0f});
  weights[6] = Tensor<float>({1, 2}, {-1.0f, 1.0f});  // logits dense
  weights[7] = Tensor<float>({2}, {0.0f, 0.0f});
  const TrainedModel m(cfg, std::move(weights), {});

  Image x = Image::full({2, 2, 1}, 0.75f);  // off the relu kink after centering
  AttackConfig atk = AttackConfig::fgsm(0.1f);
  atk.targeted = false;
  const AdversarialResult r = fgsm(m, x, 0, atk, 1);
  for (long long i = 0; i < x.size(); ++i)
    CHECK(r.x_adv.data[i] == doctest::Approx(0.85f).epsilon(1e-6));
  CHECK(r.linf == doctest::Approx(0.1f).epsilon(1e-6));
}

TEST_CASE("zero gradient leaves the input unchanged") {
  // all-zero logits layer: loss is constant, gradient vanishes
  ModelConfig cfg = micro_cfg();
  auto weights = init_weights(cfg);
  weights[weights.size() - 2].fill(0.0f);
  weights[weights.size() - 1].fill(0.0f);
  const TrainedModel m(cfg, std::move(weights), {});
  const Image x = random_image(16, 16, 3, 40);
  AttackConfig atk = AttackConfig::fgsm(0.031f);
  atk.targeted = false;
  const AdversarialResult r = fgsm(m, x, 0, atk, 2);
  CHECK(r.x_adv.data == x.data);  // sign(0) = 0
}

TEST_CASE("attack outputs respect the epsilon ball and [0,1] range") {
  const TrainedModel m = micro_model(3);
  Rng rng(41);
  for (AttackKind kind : {AttackKind::kFgsm, AttackKind::kPgd, AttackKind::kAFgsm,
                          AttackKind::kAPgd}) {
    AttackConfig atk;
    atk.kind = kind;
    atk.epsilon = 0.05f;
    atk.alpha = 0.02f;
    atk.iterations = 4;
    atk.n_tta = 2;
    atk.tta = TtaConfig::hard();
    const Image x = random_image(16, 16, 3, 42 + static_cast<int>(kind));
    const AdversarialResult r = run_attack(m, x, rng.uniform_int(0, 2), atk, 7);
    CHECK(r.linf <= 0.05f + 1e-6f);
    CHECK(linf_distance(r.x_adv, x) <= 0.05f + 1e-6f);
    for (float v : r.x_adv.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
    CHECK(static_cast<int>(r.loss_trace.size()) == (kind == AttackKind::kFgsm ||
                                                    kind == AttackKind::kAFgsm
                                                        ? 1
                                                        : 4));
  }
}

TEST_CASE("a-fgsm with N=1 and identity TTA equals fgsm bit for bit") {
  const TrainedModel m = micro_model();
  for (int trial = 0; trial < 5; ++trial) {
    const Image x = random_image(16, 16, 3, 50 + trial);
    AttackConfig plain = AttackConfig::fgsm(0.031f);
    AttackConfig adaptive = AttackConfig::a_fgsm(0.031f, 1);
    adaptive.tta = TtaConfig::identity();
    const AdversarialResult a = fgsm(m, x, trial % 2, plain, 9);
    const AdversarialResult b = a_fgsm(m, x, trial % 2, adaptive, 9);
    CHECK(a.x_adv.data == b.x_adv.data);
    CHECK(a.loss_trace == b.loss_trace);
  }
}

TEST_CASE("a-pgd with N=1 and identity TTA matches pgd step for step") {
  const TrainedModel m = micro_model();
  for (int trial = 0; trial < 3; ++trial) {
    const Image x = random_image(16, 16, 3, 60 + trial);
    AttackConfig plain = AttackConfig::pgd(0.031f, 0.007f, 6);
    plain.random_start = false;  // adaptive PGD starts from delta = 0
    AttackConfig adaptive = AttackConfig::a_pgd(0.031f, 0.007f, 6, 1);
    adaptive.tta = TtaConfig::identity();
    const AdversarialResult a = pgd(m, x, trial % 2, plain, 11);
    const AdversarialResult b = a_pgd(m, x, trial % 2, adaptive, 11);
    CHECK(a.x_adv.data == b.x_adv.data);
    CHECK(a.loss_trace == b.loss_trace);
  }
}

TEST_CASE("pgd with one iteration and no start noise reduces to an alpha-step fgsm") {
  const TrainedModel m = micro_model();
  const Image x = random_image(16, 16, 3, 70);
  AttackConfig single = AttackConfig::pgd(0.031f, 0.02f, 1);
  single.random_start = false;
  single.targeted = false;
  AttackConfig fg = AttackConfig::fgsm(0.02f);  // step alpha, then projection is a no-op
  fg.targeted = false;
  const AdversarialResult a = pgd(m, x, 1, single, 13);
  const AdversarialResult b = fgsm(m, x, 1, fg, 13);
  CHECK(a.x_adv.data == b.x_adv.data);
}

TEST_CASE("attacks are deterministic given (x, seed, cfg)") {
  const TrainedModel m = micro_model();
  const Image x = random_image(16, 16, 3, 80);
  AttackConfig atk = AttackConfig::a_pgd(0.031f, 0.01f, 3, 4);
  atk.tta = TtaConfig::hard();
  const AdversarialResult a = a_pgd(m, x, 1, atk, 17);
  const AdversarialResult b = a_pgd(m, x, 1, atk, 17);
  CHECK(a.x_adv.data == b.x_adv.data);
  const AdversarialResult c = a_pgd(m, x, 1, atk, 18);
  CHECK(a.x_adv.data != c.x_adv.data);
}

TEST_CASE("a-fgsm per-pixel perturbation never exceeds epsilon") {
  const TrainedModel m = micro_model();
  const Image x = random_image(16, 16, 3, 90);
  AttackConfig atk = AttackConfig::a_fgsm(0.031f, 8);
  atk.tta = TtaConfig::hard();
  const AdversarialResult r = a_fgsm(m, x, 0, atk, 19);
  CHECK(r.linf <= 0.031f + 1e-6f);
}

TEST_CASE("attack_batch is deterministic and matches per-image runs") {
  const TrainedModel m = micro_model();
  Dataset ds;
  ds.name = "tiny";
  ds.height = ds.width = 16;
  ds.channels = 3;
  ds.classes = 2;
  for (int i = 0; i < 6; ++i) {
    const Image img = random_image(16, 16, 3, 100 + i);
    ds.pixels.insert(ds.pixels.end(), img.data.begin(), img.data.end());
    ds.labels.push_back(i % 2);
  }
  AttackConfig atk = AttackConfig::pgd(0.031f, 0.01f, 3);
  const AttackBatchResult batch = attack_batch(m, ds, atk, 23);
  const AttackBatchResult again = attack_batch(m, ds, atk, 23);
  for (int i = 0; i < 6; ++i) CHECK(batch.images[i].data == again.images[i].data);
  const AdversarialResult single = pgd(m, ds.image(3), ds.labels[3], atk, hash_combine(23, 3));
  CHECK(batch.images[3].data == single.x_adv.data);
}

TEST_CASE("invalid attack configs are rejected") {
  AttackConfig atk;
  atk.epsilon = 0.0f;
  CHECK_THROWS_AS(atk.validate(), std::invalid_argument);
  atk = AttackConfig::a_pgd();
  atk.n_tta = 0;
  CHECK_THROWS_AS(atk.validate(), std::invalid_argument);
}
