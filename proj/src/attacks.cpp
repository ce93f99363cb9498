#include "katana/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "katana/parallel.hpp"

namespace katana {

const char* attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kAFgsm: return "a-fgsm";
    case AttackKind::kAPgd: return "a-pgd";
  }
  return "?";
}

AttackKind attack_kind_from_name(const std::string& name) {
  if (name == "fgsm") return AttackKind::kFgsm;
  if (name == "pgd") return AttackKind::kPgd;
  if (name == "a-fgsm") return AttackKind::kAFgsm;
  if (name == "a-pgd") return AttackKind::kAPgd;
  throw std::invalid_argument("unknown attack kind '" + name +
                              "' (expected fgsm|pgd|a-fgsm|a-pgd)");
}

AttackConfig AttackConfig::fgsm(float epsilon) {
  AttackConfig cfg;
  cfg.kind = AttackKind::kFgsm;
  cfg.epsilon = epsilon;
  cfg.iterations = 1;
  return cfg;
}

AttackConfig AttackConfig::pgd(float epsilon, float alpha, int iterations) {
  AttackConfig cfg;
  cfg.kind = AttackKind::kPgd;
  cfg.epsilon = epsilon;
  cfg.alpha = alpha;
  cfg.iterations = iterations;
  return cfg;
}

AttackConfig AttackConfig::a_fgsm(float epsilon, int n_tta) {
  AttackConfig cfg;
  cfg.kind = AttackKind::kAFgsm;
  cfg.epsilon = epsilon;
  cfg.iterations = 1;
  cfg.n_tta = n_tta;
  return cfg;
}

AttackConfig AttackConfig::a_pgd(float epsilon, float alpha, int iterations, int n_tta) {
  AttackConfig cfg;
  cfg.kind = AttackKind::kAPgd;
  cfg.epsilon = epsilon;
  cfg.alpha = alpha;
  cfg.iterations = iterations;
  cfg.n_tta = n_tta;
  return cfg;
}

const std::string& AttackConfig::label() const {
  static const std::string kNames[] = {"fgsm", "pgd", "a-fgsm", "a-pgd"};
  return name.empty() ? kNames[static_cast<int>(kind)] : name;
}

void AttackConfig::validate() const {
  if (!(epsilon > 0.0f)) throw std::invalid_argument("attack config: epsilon must be > 0");
  if (!(alpha > 0.0f)) throw std::invalid_argument("attack config: alpha must be > 0");
  if (iterations < 1) throw std::invalid_argument("attack config: iterations must be >= 1");
  if (target_offset < 1) throw std::invalid_argument("attack config: target_offset must be >= 1");
  const bool adaptive = kind == AttackKind::kAFgsm || kind == AttackKind::kAPgd;
  if (adaptive) {
    if (n_tta < 1) throw std::invalid_argument("attack config: n_tta must be >= 1");
    tta.validate();
  }
}

uint64_t AttackConfig::content_hash() const {
  uint64_t h = fnv1a64(label().data(), label().size());
  const float ff[3] = {epsilon, alpha, 0.0f};
  h = fnv1a64(ff, sizeof(ff), h);
  const int ii[6] = {static_cast<int>(kind), iterations, targeted, target_offset, n_tta,
                     static_cast<int>(projection)};
  h = fnv1a64(ii, sizeof(ii), h);
  const int flags[2] = {random_start, fresh_ttas_per_iter};
  h = fnv1a64(flags, sizeof(flags), h);
  if (kind == AttackKind::kAFgsm || kind == AttackKind::kAPgd)
    h = hash_combine(h, tta.content_hash());
  return h;
}

Tensor<float> project(const Tensor<float>& delta, float eps, ProjectionMode mode) {
  if (!(eps > 0.0f)) throw std::invalid_argument("project: eps must be > 0");
  Tensor<float> out = delta;
  if (mode == ProjectionMode::kClamp) {
    for (auto& v : out.data) v = v < -eps ? -eps : (v > eps ? eps : v);
    return out;
  }
  float norm = 0.0f;
  for (float v : out.data) norm = std::max(norm, std::abs(v));
  if (norm > eps) {
    const float scale = eps / norm;
    // the trailing clamp only shaves rounding spill, keeping the norm bound
    // exact and the operator idempotent
    for (auto& v : out.data) {
      v *= scale;
      v = v < -eps ? -eps : (v > eps ? eps : v);
    }
  }
  return out;
}

namespace {

inline float clip01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

struct GradWorkspace {
  Tape<float> tape;
  Image point;
};

// One iteration of the shared attack core: mean-of-signs over the batch of
// evaluation points. Each augmentation writes its own int8 sign slice; the
// integer reduction afterwards is exact, so the result does not depend on
// the schedule.
struct SignAccumulator {
  std::vector<int8_t> signs;  // n x image-size slices
  std::vector<double> losses;
  long long size = 0;

  void reset(long long image_size, int n) {
    size = image_size;
    signs.assign(static_cast<size_t>(n) * image_size, 0);
    losses.assign(n, 0.0);
  }
  int8_t* slice(int aug_index) { return signs.data() + static_cast<long long>(aug_index) * size; }
};

void accumulate_sign_grad(const TrainedModel& model, const Image& point, int label, int aug_index,
                          SignAccumulator& acc, GradWorkspace& ws) {
  const ModelGraph& mg = model.graph();
  const Tensor<float>& loss =
      forward(mg.graph, mg.loss, {{mg.input, &point}}, label, ws.tape);
  if (!std::isfinite(loss.data[0]))
    throw std::runtime_error("attack: non-finite loss on augmentation " +
                             std::to_string(aug_index));
  acc.losses[aug_index] = loss.data[0];
  backward(mg.graph, ws.tape, /*param_grads=*/false);
  const Tensor<float>& grad = ws.tape.grad[mg.input];
  int8_t* signs = acc.slice(aug_index);
  for (long long i = 0; i < grad.size(); ++i) {
    const float g = grad.data[i];
    signs[i] = static_cast<int8_t>((g > 0.0f) - (g < 0.0f));  // sign(0) = 0
  }
}

// delta_{k+1} = P[delta_k + dir * (step/N) * sum_i sign(grad_i)], evaluated at
// x_t[i] + delta_k where x_t[i] are TTAs of the clean x (the identity stream
// when `use_tta` is off). Augmentations run in parallel; the integer sign
// reduction keeps results independent of the schedule.
AdversarialResult iterative_core(const TrainedModel& model, const Image& x, int y,
                                 const AttackConfig& cfg, uint64_t seed, bool use_tta,
                                 int iterations, float step, bool random_start) {
  cfg.validate();
  const int classes = model.config().classes;
  if (y < 0 || y >= classes)
    throw std::invalid_argument("attack: label " + std::to_string(y) + " outside [0," +
                                std::to_string(classes) + ")");
  const int label = cfg.targeted ? (y + cfg.target_offset) % classes : y;
  const float dir = cfg.targeted ? -1.0f : 1.0f;
  const int n = use_tta ? cfg.n_tta : 1;

  Tensor<float> delta(x.shape);
  if (random_start) {
    Rng rng = Rng::stream(seed, 0x5742ull);
    for (auto& v : delta.data) v = cfg.epsilon * (2.0f * static_cast<float>(rng.uniform()) - 1.0f);
  }

  AdversarialResult result;
  result.loss_trace.reserve(iterations);
  SignAccumulator acc;
  const float scale = dir * step / static_cast<float>(n);

  for (int k = 0; k < iterations; ++k) {
    acc.reset(x.size(), n);
    const uint64_t round = cfg.fresh_ttas_per_iter ? static_cast<uint64_t>(k) : 0ull;
    parallel_for_state(
        n, [] { return GradWorkspace(); },
        [&](long long i, GradWorkspace& ws) {
          if (use_tta) {
            Rng rng = Rng::stream(seed, (round << 32) | static_cast<uint64_t>(i));
            const TtaParams params = sample_params(cfg.tta, rng);
            ws.point = apply_tta(x, params, rng);
          } else {
            ws.point = x;
          }
          for (long long j = 0; j < ws.point.size(); ++j) ws.point.data[j] += delta.data[j];
          accumulate_sign_grad(model, ws.point, label, static_cast<int>(i), acc, ws);
        });

    double mean_loss = 0.0;
    for (double l : acc.losses) mean_loss += l;
    result.loss_trace.push_back(mean_loss / n);

    for (long long i = 0; i < delta.size(); ++i) {
      int sum = 0;
      for (int a = 0; a < n; ++a) sum += acc.signs[static_cast<long long>(a) * x.size() + i];
      delta.data[i] += scale * static_cast<float>(sum);
    }
    delta = project(delta, cfg.epsilon, cfg.projection);
  }

  result.x_adv = x;
  for (long long i = 0; i < x.size(); ++i)
    result.x_adv.data[i] = clip01(x.data[i] + delta.data[i]);
  for (long long i = 0; i < x.size(); ++i)
    result.linf = std::max(result.linf, std::abs(result.x_adv.data[i] - x.data[i]));
  return result;
}

}  // namespace

AdversarialResult fgsm(const TrainedModel& model, const Image& x, int y, const AttackConfig& cfg,
                       uint64_t seed) {
  // single step of size epsilon, no start noise
  return iterative_core(model, x, y, cfg, seed, /*use_tta=*/false, /*iterations=*/1,
                        /*step=*/cfg.epsilon, /*random_start=*/false);
}

AdversarialResult pgd(const TrainedModel& model, const Image& x, int y, const AttackConfig& cfg,
                      uint64_t seed) {
  return iterative_core(model, x, y, cfg, seed, /*use_tta=*/false, cfg.iterations, cfg.alpha,
                        cfg.random_start);
}

AdversarialResult a_fgsm(const TrainedModel& model, const Image& x, int y, const AttackConfig& cfg,
                         uint64_t seed) {
  return iterative_core(model, x, y, cfg, seed, /*use_tta=*/true, /*iterations=*/1,
                        /*step=*/cfg.epsilon, /*random_start=*/false);
}

AdversarialResult a_pgd(const TrainedModel& model, const Image& x, int y, const AttackConfig& cfg,
                        uint64_t seed) {
  // delta_0 = 0: the adaptive attack starts from a zero perturbation map
  return iterative_core(model, x, y, cfg, seed, /*use_tta=*/true, cfg.iterations, cfg.alpha,
                        /*random_start=*/false);
}

AdversarialResult run_attack(const TrainedModel& model, const Image& x, int y,
                             const AttackConfig& cfg, uint64_t seed) {
  switch (cfg.kind) {
    case AttackKind::kFgsm: return fgsm(model, x, y, cfg, seed);
    case AttackKind::kPgd: return pgd(model, x, y, cfg, seed);
    case AttackKind::kAFgsm: return a_fgsm(model, x, y, cfg, seed);
    case AttackKind::kAPgd: return a_pgd(model, x, y, cfg, seed);
  }
  throw std::invalid_argument("run_attack: bad attack kind");
}

AttackBatchResult attack_batch(const TrainedModel& model, const Dataset& ds,
                               const AttackConfig& cfg, uint64_t seed) {
  cfg.validate();
  AttackBatchResult out;
  out.images.resize(ds.size());
  out.linf.resize(ds.size());
  const bool adaptive = cfg.kind == AttackKind::kAFgsm || cfg.kind == AttackKind::kAPgd;
  if (adaptive) {
    // adaptive attacks parallelize across their augmentations internally
    for (int i = 0; i < ds.size(); ++i) {
      AdversarialResult r =
          run_attack(model, ds.image(i), ds.labels[i], cfg, hash_combine(seed, i));
      out.images[i] = std::move(r.x_adv);
      out.linf[i] = r.linf;
    }
  } else {
    parallel_for(ds.size(), [&](long long i) {
      AdversarialResult r = run_attack(model, ds.image(static_cast<int>(i)),
                                       ds.labels[i], cfg, hash_combine(seed, i));
      out.images[i] = std::move(r.x_adv);
      out.linf[i] = r.linf;
    });
  }
  return out;
}

}  // namespace katana
