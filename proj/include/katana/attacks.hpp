#pragma once

// White-box attacks: FGSM, PGD with an explicit projection operator, and the
// augmentation-aware A-FGSM / A-PGD that average gradient signs over the
// defender's TTA distribution. All attacks share one iterative core, so the
// adaptive attacks with N=1 and an identity TtaConfig reproduce their vanilla
// counterparts bit for bit.

#include <cstdint>
#include <string>
#include <vector>

#include "katana/augment.hpp"
#include "katana/model.hpp"
#include "katana/tensor.hpp"

namespace katana {

enum class AttackKind : uint8_t { kFgsm, kPgd, kAFgsm, kAPgd };
enum class ProjectionMode : uint8_t { kClamp, kRadial };

const char* attack_kind_name(AttackKind kind);
AttackKind attack_kind_from_name(const std::string& name);

struct AttackConfig {
  std::string name;  // row label in results; defaults to the kind name
  AttackKind kind = AttackKind::kPgd;
  float epsilon = 0.031f;
  float alpha = 0.003f;
  int iterations = 100;
  bool targeted = true;
  int target_offset = 1;  // target label = (y + offset) mod classes
  int n_tta = 25;         // adaptive kinds
  TtaConfig tta;          // adaptive kinds
  ProjectionMode projection = ProjectionMode::kClamp;
  bool random_start = true;        // vanilla PGD only; adaptive PGD starts at 0
  bool fresh_ttas_per_iter = true; // resample augmentations every iteration

  static AttackConfig fgsm(float epsilon = 0.031f);
  static AttackConfig pgd(float epsilon = 0.031f, float alpha = 0.003f, int iterations = 100);
  static AttackConfig a_fgsm(float epsilon = 0.031f, int n_tta = 256);
  static AttackConfig a_pgd(float epsilon = 0.031f, float alpha = 0.007f, int iterations = 10,
                            int n_tta = 25);

  const std::string& label() const;
  void validate() const;
  uint64_t content_hash() const;
};

struct AdversarialResult {
  Image x_adv;
  std::vector<double> loss_trace;  // mean loss per iteration, before the step
  float linf = 0.0f;               // achieved ||x_adv - x||_inf
};

// Projection onto the L-inf ball of radius eps. Clamp mode clips each
// coordinate; radial mode rescales the whole map when its norm exceeds eps.
// Both are idempotent and guarantee ||result||_inf <= eps.
Tensor<float> project(const Tensor<float>& delta, float eps, ProjectionMode mode);

AdversarialResult fgsm(const TrainedModel& model, const Image& x, int y, const AttackConfig& cfg,
                       uint64_t seed);
AdversarialResult pgd(const TrainedModel& model, const Image& x, int y, const AttackConfig& cfg,
                      uint64_t seed);
AdversarialResult a_fgsm(const TrainedModel& model, const Image& x, int y, const AttackConfig& cfg,
                         uint64_t seed);
AdversarialResult a_pgd(const TrainedModel& model, const Image& x, int y, const AttackConfig& cfg,
                        uint64_t seed);

AdversarialResult run_attack(const TrainedModel& model, const Image& x, int y,
                             const AttackConfig& cfg, uint64_t seed);

struct AttackBatchResult {
  std::vector<Image> images;
  std::vector<float> linf;
};

// Attacks every image of the split against `model`; image i uses substream i
// of `seed`, so the batch is deterministic and order-independent.
AttackBatchResult attack_batch(const TrainedModel& model, const Dataset& ds,
                               const AttackConfig& cfg, uint64_t seed);

}  // namespace katana
