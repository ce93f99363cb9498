#pragma once

// On-disk store of per-image TTA feature matrices, keyed by (image-set id,
// model id, TTA config hash, seed, feature kind). A hit returns bit-identical
// matrices to a fresh computation.

#include <cstdint>
#include <string>
#include <vector>

#include "katana/augment.hpp"
#include "katana/classify.hpp"
#include "katana/data.hpp"
#include "katana/model.hpp"

namespace katana {

struct CacheKey {
  uint64_t image_set_id = 0;
  uint64_t model_id = 0;
  uint64_t tta_hash = 0;
  uint64_t seed = 0;
  FeatureKind kind = FeatureKind::kLogits;

  uint64_t combined() const;
};

class LogitsCacheStore {
 public:
  explicit LogitsCacheStore(std::string dir);

  bool contains(const CacheKey& key) const;
  std::string entry_path(const CacheKey& key) const;

  // Loads the entry or computes it (TTA generation + forward passes per
  // image) and persists it. Idempotent; recomputation reproduces identical
  // bytes.
  std::vector<Matrix> get_or_compute(const CacheKey& key, const TrainedModel& model,
                                     const std::vector<Image>& images, const TtaConfig& tta);

  int hits() const { return hits_; }
  int misses() const { return misses_; }

 private:
  std::vector<Matrix> load(const CacheKey& key, size_t expected_images) const;
  void store(const CacheKey& key, const std::vector<Matrix>& matrices) const;

  std::string dir_;
  int hits_ = 0;
  int misses_ = 0;
};

// The feature blocks themselves: one N x width matrix per image, computed
// with per-image seed substreams (image i uses substream i of `seed`).
std::vector<Matrix> compute_tta_features(const TrainedModel& model,
                                         const std::vector<Image>& images, const TtaConfig& tta,
                                         uint64_t seed, FeatureKind kind);

uint64_t image_set_id(const std::vector<Image>& images);
std::vector<Image> dataset_images(const Dataset& ds);

}  // namespace katana
