#pragma once

// Defense heads over TTA features: the summed-logits argmax classifier, the
// KATANA forest (or logistic-regression) head fitted on clean + adversarial
// test-val features, and the ensemble-majority baseline.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "katana/forest.hpp"
#include "katana/model.hpp"
#include "katana/tensor.hpp"

namespace katana {

// N x width feature block for one image (one row per augmentation).
struct TtaFeatures {
  Matrix m;
  FeatureKind kind = FeatureKind::kLogits;
};

enum class FeatureOrdering : uint8_t { kGeneration, kSortedPerClass };

const char* feature_ordering_name(FeatureOrdering ordering);
FeatureOrdering feature_ordering_from_name(const std::string& name);

struct KatanaLayout {
  int n = 0;      // augmentations per image
  int width = 0;  // per-row feature width
  FeatureKind kind = FeatureKind::kLogits;
  FeatureOrdering ordering = FeatureOrdering::kGeneration;
};

struct LogregConfig {
  float l2 = 1e-4f;
  int epochs = 200;
  float lr = 0.05f;
  uint64_t seed = 0;
};

struct KatanaHeadConfig {
  enum class Kind : uint8_t { kForest, kLogreg } kind = Kind::kForest;
  ForestConfig forest;
  LogregConfig logreg;
};

struct KatanaModel {
  std::variant<ForestModel, LinearHead> head;
  KatanaLayout layout;
  std::vector<std::string> attack_tags;  // attacks whose features fitted this head
  int classes = 0;

  void save(const std::string& path) const;
  // Refuses files whose layout disagrees with `expected` when provided.
  static KatanaModel load(const std::string& path, const KatanaLayout* expected = nullptr);
};

// argmax_c sum_i l[i,c] with lowest-index tie-break.
int tta_predict(const Matrix& logits);
// Diagnostic alternative: argmax of the mean softmax row.
int tta_predict_prob_mean(const Matrix& logits);

std::vector<float> build_katana_features(const TtaFeatures& f, const KatanaLayout& layout);

KatanaModel katana_fit(const std::vector<TtaFeatures>& normal_feats,
                       const std::vector<TtaFeatures>& adv_feats, const std::vector<int>& labels,
                       int classes, const KatanaLayout& layout, const KatanaHeadConfig& head_cfg,
                       std::vector<std::string> attack_tags);

int katana_predict(const KatanaModel& model, const TtaFeatures& f);

// Majority vote over per-model argmax; ties broken by summed logits, then by
// the lowest class index.
int ensemble_predict(const std::vector<const TrainedModel*>& models, const Image& x);

}  // namespace katana
