#pragma once

// Orchestration: dataset provisioning, model training, attack crafting,
// cached TTA feature computation, defense evaluation under the paper's
// protocol (attacks crafted on the plain surrogate model; the KATANA head
// fitted only on test-val features), ablations, and transferability modes.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "katana/cache.hpp"
#include "katana/config.hpp"

namespace katana {

struct ResultsRow {
  std::string dataset;
  std::string defense;
  std::string attack;          // "none" when no attack applies
  double clean_accuracy = 0;   // percent
  double adv_accuracy = 0;     // percent; meaningless when attack == "none"
  bool has_adv = false;
  uint64_t seed = 0;
  double wall_time_s = 0;      // reported in the manifest, not the CSV
};

struct ResultsTable {
  std::vector<ResultsRow> rows;

  // Fixed header; deterministic bytes for a fixed config and seed (wall time
  // is manifest-only so reruns compare equal).
  std::string to_csv() const;
};

struct ProvisionedData {
  Dataset train, train_val, test, test_val;
  std::vector<int> test_indices, test_val_indices;  // into the source test set
};

ProvisionedData provision_dataset(const DatasetConfig& cfg);

// Split origin tag used to enforce protocol hygiene: KATANA heads may only be
// fitted on test-val features.
enum class SplitTag : uint8_t { kTest, kTestVal };

class Harness {
 public:
  Harness(ExperimentConfig cfg, std::string out_dir);

  const ExperimentConfig& config() const { return cfg_; }
  const ProvisionedData& data();
  const TrainedModel& model();
  // Use a pre-trained model instead of training one.
  void set_model(TrainedModel m);

  // Fitted heads per tested attack ("global" fits once for all attacks).
  std::map<std::string, KatanaModel> fit_katana_heads(const std::string& mode);

  // Adversarial images for one attack on the given split (cached per run).
  const AttackBatchResult& adversarial(const std::string& attack_name, SplitTag split);

  // TTA feature blocks for (split, attack|clean). `kind` probs is derived
  // from the cached logits entry. `n_override`/`tta_override` serve the
  // ablations; `repeat` shifts the augmentation seed stream.
  std::vector<Matrix> features(SplitTag split, const std::string& attack_name, FeatureKind kind,
                               int repeat = 0, const TtaConfig* tta_override = nullptr);

  ResultsTable evaluate();
  ResultsTable transfer_eval(const std::string& mode);
  // Adversarial (and clean) accuracy of the TTA and KATANA heads as a
  // function of the augmentation count, with mean/std over repeats.
  std::string ablate_n_csv();
  // 18-cell grid {logits,probs,embeddings} x {soft,hard} x sigma_values.
  std::string ablate_katana_csv();

  void write_results(const ResultsTable& table) const;
  void write_manifest(const ResultsTable* table, const std::string& error = "") const;
  const std::string& out_dir() const { return out_dir_; }

 private:
  struct FittedHead {
    KatanaModel model;
    double clean_accuracy = 0;  // on the test split, percent
  };

  KatanaModel fit_katana_head(const std::vector<std::string>& fit_attacks,
                              const KatanaHeadConfig& head_cfg, FeatureKind kind,
                              uint64_t head_seed_salt);
  double head_accuracy(const KatanaModel& head, const std::vector<Matrix>& blocks,
                       const std::vector<int>& labels, FeatureKind kind) const;
  std::vector<const AttackConfig*> attacks_for_mode(const std::string& mode,
                                                    const std::string& tested) const;
  void ensure_ensemble();

  ExperimentConfig cfg_;
  std::string out_dir_;
  LogitsCacheStore cache_;
  std::optional<ProvisionedData> data_;
  std::optional<TrainedModel> model_;
  std::vector<TrainedModel> ensemble_;
  std::map<std::string, AttackBatchResult> adv_test_, adv_tv_;
  std::map<std::string, double> attack_seconds_;
  double train_seconds_ = 0;
};

// percent of images whose plain-model argmax equals the label
double plain_accuracy(const TrainedModel& model, const std::vector<Image>& images,
                      const std::vector<int>& labels);

int run_cli(int argc, char** argv);

}  // namespace katana
