#pragma once

// Small convolutional classifier: three conv blocks (conv-relu-conv-relu-
// 2x2 average pool), global average pool, dense embedding, dense logits.
// Trained with SGD momentum + Nesterov, L2 weight decay, and learning-rate
// decay on train-val accuracy plateaus.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "katana/autodiff.hpp"
#include "katana/data.hpp"
#include "katana/tensor.hpp"

namespace katana {

struct ModelConfig {
  int height = 32, width = 32, channels = 3;
  int classes = 4;
  std::vector<int> conv_widths{8, 16, 24};  // one entry per conv block
  int embed_dim = 24;
  // fixed input normalization (x - mean) * scale, folded into the graph so
  // input gradients see it
  float input_mean = 0.5f;
  float input_scale = 2.0f;
  uint64_t seed = 1;

  void validate() const;
  uint64_t content_hash() const;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 100;
  float learning_rate = 0.1f;
  float lr_decay = 0.9f;
  int patience = 3;
  float momentum = 0.9f;
  bool nesterov = true;
  float weight_decay = 1e-4f;
  uint64_t seed = 1;

  void validate() const;
};

struct TrainMeta {
  int epochs_run = 0;
  double final_train_val_accuracy = 0.0;
  double final_learning_rate = 0.0;
};

enum class FeatureKind : uint8_t { kLogits, kProbs, kEmbeddings };

const char* feature_kind_name(FeatureKind kind);
FeatureKind feature_kind_from_name(const std::string& name);

// Node handles into the model graph; one graph per model, shared across
// threads with per-thread tapes.
struct ModelGraph {
  Graph<float> graph;
  int input = -1;
  int embedding = -1;
  int logits = -1;
  int loss = -1;
};

class TrainedModel {
 public:
  TrainedModel() = default;
  TrainedModel(ModelConfig cfg, std::vector<Tensor<float>> weights, TrainMeta meta);

  const ModelConfig& config() const { return cfg_; }
  const TrainMeta& meta() const { return meta_; }
  const std::vector<Tensor<float>>& weights() const { return weights_; }
  const ModelGraph& graph() const { return graph_; }

  // One logits row per image.
  Matrix predict_logits(const std::vector<Image>& batch) const;
  Matrix predict_logits(const Dataset& ds) const;
  Matrix extract_features(const std::vector<Image>& batch, FeatureKind kind) const;
  int predict_label(const Image& img) const;

  int feature_width(FeatureKind kind) const;
  uint64_t content_hash() const;

  void save(const std::string& path) const;
  // expected_classes >= 0 enforces the caller's class count.
  static TrainedModel load(const std::string& path, int expected_classes = -1);

 private:
  void rebuild_graph();

  ModelConfig cfg_;
  std::vector<Tensor<float>> weights_;
  TrainMeta meta_;
  ModelGraph graph_;
};

// Fresh He-uniform weights for the architecture.
std::vector<Tensor<float>> init_weights(const ModelConfig& cfg);

// Builds the architecture graph over the given weights (shared layout with
// init_weights). Templated so gradient checks can run in double precision.
template <typename T>
void build_model_graph(const ModelConfig& cfg, const std::vector<Tensor<T>>& weights,
                       Graph<T>& graph, int& input, int& embedding, int& logits, int& loss);

TrainedModel train(const Dataset& train_split, const Dataset& train_val_split,
                   const ModelConfig& model_cfg, const TrainConfig& train_cfg);

// One SGD update (momentum + optional Nesterov, coupled L2 weight decay).
void sgd_update(Tensor<float>& w, const Tensor<float>& grad, Tensor<float>& velocity, float lr,
                float momentum, bool nesterov, float weight_decay);

double accuracy(const TrainedModel& model, const Dataset& ds);

void softmax_row(const float* logits, int classes, float* out);

}  // namespace katana
