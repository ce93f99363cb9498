#pragma once

// Experiment configuration: a sectioned key-value file parsed into typed
// configs, plus the resolved echo emitted with every run for provenance.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "katana/attacks.hpp"
#include "katana/augment.hpp"
#include "katana/classify.hpp"
#include "katana/data.hpp"
#include "katana/model.hpp"

namespace katana {

struct ConfigError : std::runtime_error {
  ConfigError(const std::string& file, int line, const std::string& field,
              const std::string& message);
  int line;
  std::string field;
};

// Raw sectioned key-value view of a config file. Sections keep file order;
// keys inside a section are unique.
struct RawConfig {
  struct Section {
    std::string name;
    int line = 0;
    std::map<std::string, std::pair<std::string, int>> values;  // key -> (value, line)
  };
  std::string path;
  std::vector<Section> sections;

  const Section* find(const std::string& name) const;
};

RawConfig parse_raw_config(const std::string& path);
RawConfig parse_raw_config_text(const std::string& text, const std::string& path);

enum class DatasetKind : uint8_t { kSynthetic, kCifar10, kRaw };

struct DatasetConfig {
  DatasetKind kind = DatasetKind::kSynthetic;
  int classes = 4;
  int size = 32;
  int train_count = 2000;
  int test_count = 500;
  uint64_t seed = 42;
  double train_val_fraction = 0.05;
  int test_val_count = 250;
  std::string dir;   // cifar10
  std::string path;  // raw
};

struct EvalConfig {
  std::vector<std::string> defenses{"plain", "tta", "katana"};
  std::string katana_mode = "per-attack";  // per-attack | global | loocv
  FeatureKind feature_kind = FeatureKind::kLogits;
  FeatureOrdering feature_ordering = FeatureOrdering::kGeneration;
  KatanaHeadConfig head;
  int ensemble_size = 9;
  uint64_t seed = 7;
  int repeats = 5;                                        // ablate-n
  std::vector<int> n_values{1, 2, 4, 8, 16, 32, 64, 128, 256};  // ablate-n
  std::vector<float> sigma_values{0.0f, 0.005f, 0.0125f};       // ablate-katana
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  TtaConfig tta;
  std::vector<AttackConfig> attacks;
  EvalConfig eval;

  void validate() const;
};

ExperimentConfig parse_experiment_config(const std::string& path);
ExperimentConfig experiment_config_from_raw(const RawConfig& raw);

// Canonical echo of a resolved config; parseable by the same parser.
std::string config_echo(const ExperimentConfig& cfg);

}  // namespace katana
