#include "katana/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "katana/io.hpp"
#include "katana/parallel.hpp"
#include "katana/rng.hpp"

namespace katana {

void ModelConfig::validate() const {
  if (classes < 2) throw std::invalid_argument("model config: classes must be >= 2");
  if (conv_widths.empty() || conv_widths.size() > 4)
    throw std::invalid_argument("model config: 1..4 conv blocks supported");
  const int pool_factor = 1 << static_cast<int>(conv_widths.size());
  if (height % pool_factor || width % pool_factor)
    throw std::invalid_argument("model config: input " + std::to_string(height) + "x" +
                                std::to_string(width) + " must be divisible by " +
                                std::to_string(pool_factor));
  for (int wdt : conv_widths)
    if (wdt < 1) throw std::invalid_argument("model config: conv width must be >= 1");
  if (embed_dim < 1) throw std::invalid_argument("model config: embed_dim must be >= 1");
  if (channels < 1) throw std::invalid_argument("model config: channels must be >= 1");
  if (!(input_scale > 0.0f)) throw std::invalid_argument("model config: input_scale must be > 0");
}

uint64_t ModelConfig::content_hash() const {
  std::vector<int> fields{height, width, channels, classes, embed_dim};
  fields.insert(fields.end(), conv_widths.begin(), conv_widths.end());
  uint64_t h = fnv1a64(fields.data(), fields.size() * sizeof(int));
  const float norm[2] = {input_mean, input_scale};
  h = fnv1a64(norm, sizeof(norm), h);
  return fnv1a64(&seed, sizeof(seed), h);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("train config: epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0f && learning_rate <= 1.0f))
    throw std::invalid_argument("train config: learning_rate must be in (0,1]");
  if (!(lr_decay > 0.0f && lr_decay <= 1.0f))
    throw std::invalid_argument("train config: lr_decay must be in (0,1]");
  if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
  if (momentum < 0.0f || momentum >= 1.0f)
    throw std::invalid_argument("train config: momentum must be in [0,1)");
  if (weight_decay < 0.0f) throw std::invalid_argument("train config: weight_decay must be >= 0");
}

const char* feature_kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::kLogits: return "logits";
    case FeatureKind::kProbs: return "probs";
    case FeatureKind::kEmbeddings: return "embeddings";
  }
  return "?";
}

FeatureKind feature_kind_from_name(const std::string& name) {
  if (name == "logits") return FeatureKind::kLogits;
  if (name == "probs") return FeatureKind::kProbs;
  if (name == "embeddings") return FeatureKind::kEmbeddings;
  throw std::invalid_argument("unknown feature kind '" + name +
                              "' (expected logits|probs|embeddings)");
}

void softmax_row(const float* logits, int classes, float* out) {
  float mx = logits[0];
  for (int c = 1; c < classes; ++c) mx = std::max(mx, logits[c]);
  double sum = 0.0;
  for (int c = 0; c < classes; ++c) sum += std::exp(static_cast<double>(logits[c] - mx));
  for (int c = 0; c < classes; ++c)
    out[c] = static_cast<float>(std::exp(static_cast<double>(logits[c] - mx)) / sum);
}

// Weight layout: per block [conv_w, conv_b, conv_w, conv_b], then embedding
// dense [w, b], then logits dense [w, b].
std::vector<Tensor<float>> init_weights(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<Tensor<float>> weights;
  Rng rng = Rng::stream(cfg.seed, 0xC0DE);
  auto he_uniform = [&](Shape shape, int fan_in) {
    Tensor<float> t(std::move(shape));
    const float limit = std::sqrt(6.0f / static_cast<float>(fan_in));
    for (auto& v : t.data) v = rng.uniform_float(-limit, limit);
    return t;
  };
  // small positive conv biases keep early relus alive on low-contrast inputs
  int in_ch = cfg.channels;
  for (const int width : cfg.conv_widths) {
    weights.push_back(he_uniform({3, 3, in_ch, width}, 9 * in_ch));
    weights.push_back(Tensor<float>::full({width}, 0.05f));
    weights.push_back(he_uniform({3, 3, width, width}, 9 * width));
    weights.push_back(Tensor<float>::full({width}, 0.05f));
    in_ch = width;
  }
  weights.push_back(he_uniform({in_ch, cfg.embed_dim}, in_ch));
  weights.push_back(Tensor<float>({cfg.embed_dim}));
  weights.push_back(he_uniform({cfg.embed_dim, cfg.classes}, cfg.embed_dim));
  weights.push_back(Tensor<float>({cfg.classes}));
  return weights;
}

template <typename T>
void build_model_graph(const ModelConfig& cfg, const std::vector<Tensor<T>>& weights,
                       Graph<T>& graph, int& input, int& embedding, int& logits, int& loss) {
  cfg.validate();
  const size_t expected = cfg.conv_widths.size() * 4 + 4;
  if (weights.size() != expected)
    throw std::invalid_argument("model graph: expected " + std::to_string(expected) +
                                " weight tensors, got " + std::to_string(weights.size()));
  input = graph.add_input({cfg.height, cfg.width, cfg.channels});
  // normalize the [0,1] pixel range; all-positive inputs make unnormalized
  // relu stacks collapse under SGD
  const Shape in_shape{cfg.height, cfg.width, cfg.channels};
  const int offset = graph.add_const(Tensor<T>::full(in_shape, T(-cfg.input_mean)));
  int x = graph.add(input, offset);
  if (cfg.input_scale != 1.0f) {
    const int gain = graph.add_const(Tensor<T>::full(in_shape, T(cfg.input_scale)));
    x = graph.mul(x, gain);
  }
  size_t wi = 0;
  for (size_t b = 0; b < cfg.conv_widths.size(); ++b) {
    const int w1 = graph.add_param(weights[wi++]);
    const int b1 = graph.add_param(weights[wi++]);
    x = graph.relu(graph.conv2d(x, w1, b1));
    const int w2 = graph.add_param(weights[wi++]);
    const int b2 = graph.add_param(weights[wi++]);
    x = graph.relu(graph.conv2d(x, w2, b2));
    x = graph.avg_pool2(x);
  }
  x = graph.global_avg_pool(x);
  const int we = graph.add_param(weights[wi++]);
  const int be = graph.add_param(weights[wi++]);
  embedding = graph.relu(graph.dense(x, we, be));
  const int wl = graph.add_param(weights[wi++]);
  const int bl = graph.add_param(weights[wi++]);
  logits = graph.dense(embedding, wl, bl);
  loss = graph.softmax_cross_entropy(logits);
}

template void build_model_graph<float>(const ModelConfig&, const std::vector<Tensor<float>>&,
                                       Graph<float>&, int&, int&, int&, int&);
template void build_model_graph<double>(const ModelConfig&, const std::vector<Tensor<double>>&,
                                        Graph<double>&, int&, int&, int&, int&);

TrainedModel::TrainedModel(ModelConfig cfg, std::vector<Tensor<float>> weights, TrainMeta meta)
    : cfg_(std::move(cfg)), weights_(std::move(weights)), meta_(meta) {
  rebuild_graph();
}

void TrainedModel::rebuild_graph() {
  graph_ = ModelGraph{};
  build_model_graph(cfg_, weights_, graph_.graph, graph_.input, graph_.embedding, graph_.logits,
                    graph_.loss);
}

int TrainedModel::feature_width(FeatureKind kind) const {
  return kind == FeatureKind::kEmbeddings ? cfg_.embed_dim : cfg_.classes;
}

Matrix TrainedModel::extract_features(const std::vector<Image>& batch, FeatureKind kind) const {
  const int out_node = kind == FeatureKind::kEmbeddings ? graph_.embedding : graph_.logits;
  Matrix out(static_cast<int>(batch.size()), feature_width(kind));
  parallel_for_state(
      static_cast<long long>(batch.size()), [] { return Tape<float>(); },
      [&](long long i, Tape<float>& tape) {
        const Tensor<float>& v = forward(graph_.graph, out_node, {{graph_.input, &batch[i]}}, -1, tape);
        float* row = out.row(static_cast<int>(i));
        if (kind == FeatureKind::kProbs)
          softmax_row(v.ptr(), out.cols, row);
        else
          std::copy(v.data.begin(), v.data.end(), row);
      });
  return out;
}

Matrix TrainedModel::predict_logits(const std::vector<Image>& batch) const {
  return extract_features(batch, FeatureKind::kLogits);
}

Matrix TrainedModel::predict_logits(const Dataset& ds) const {
  std::vector<Image> batch;
  batch.reserve(ds.size());
  for (int i = 0; i < ds.size(); ++i) batch.push_back(ds.image(i));
  return predict_logits(batch);
}

int TrainedModel::predict_label(const Image& img) const {
  Tape<float> tape;
  const Tensor<float>& l = forward(graph_.graph, graph_.logits, {{graph_.input, &img}}, -1, tape);
  int label = 0;
  for (int c = 1; c < cfg_.classes; ++c)
    if (l.data[c] > l.data[label]) label = c;
  return label;
}

uint64_t TrainedModel::content_hash() const {
  uint64_t h = cfg_.content_hash();
  for (const auto& w : weights_) h = fnv1a64(w.data.data(), w.data.size() * sizeof(float), h);
  return h;
}

double accuracy(const TrainedModel& model, const Dataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  const Matrix logits = model.predict_logits(ds);
  int hits = 0;
  for (int i = 0; i < ds.size(); ++i) {
    const float* row = logits.row(i);
    int label = 0;
    for (int c = 1; c < logits.cols; ++c)
      if (row[c] > row[label]) label = c;
    hits += label == ds.labels[i];
  }
  return static_cast<double>(hits) / ds.size();
}

namespace {

// Per-sample weight gradients are accumulated by fixed chunks and then summed
// in chunk order, so the result is independent of the thread count.
struct BatchGrad {
  std::vector<Tensor<float>> sums;
  double loss = 0.0;
};

constexpr int kGradChunks = 8;

void check_dataset_for_training(const Dataset& ds, int classes, const char* name) {
  if (ds.size() == 0) throw std::invalid_argument(std::string("train: empty ") + name + " split");
  for (int label : ds.labels)
    if (label < 0 || label >= classes)
      throw std::invalid_argument(std::string("train: ") + name + " label " +
                                  std::to_string(label) + " outside [0," +
                                  std::to_string(classes) + ")");
}

}  // namespace

void sgd_update(Tensor<float>& w, const Tensor<float>& grad, Tensor<float>& velocity, float lr,
                float momentum, bool nesterov, float weight_decay) {
  for (long long i = 0; i < w.size(); ++i) {
    const float g = grad.data[i] + weight_decay * w.data[i];
    velocity.data[i] = momentum * velocity.data[i] + g;
    const float step = nesterov ? g + momentum * velocity.data[i] : velocity.data[i];
    w.data[i] -= lr * step;
  }
}

TrainedModel train(const Dataset& train_split, const Dataset& train_val_split,
                   const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  model_cfg.validate();
  train_cfg.validate();
  check_dataset_for_training(train_split, model_cfg.classes, "train");
  check_dataset_for_training(train_val_split, model_cfg.classes, "train-val");

  std::vector<Tensor<float>> weights = init_weights(model_cfg);
  Graph<float> graph;
  int in_node, embed_node, logits_node, loss_node;
  build_model_graph(model_cfg, weights, graph, in_node, embed_node, logits_node, loss_node);
  const std::vector<int>& params = graph.param_ids();

  std::vector<Tensor<float>> velocity;
  velocity.reserve(params.size());
  for (int p : params) velocity.emplace_back(graph.node(p).shape);

  const int n = train_split.size();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  float lr = train_cfg.learning_rate;
  double best_val = -1.0;
  int epochs_without_improvement = 0;
  TrainMeta meta;

  auto snapshot_model = [&]() {
    std::vector<Tensor<float>> out;
    out.reserve(params.size());
    for (int p : params) out.push_back(graph.param_value(p));
    return out;
  };
  auto eval_train_val = [&]() {
    TrainedModel m(model_cfg, snapshot_model(), meta);
    return accuracy(m, train_val_split);
  };

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    Rng shuffle_rng = Rng::stream(train_cfg.seed, 0xE0000000ull + epoch);
    shuffle_rng.shuffle(order.begin(), order.end());

    for (int start = 0; start < n; start += train_cfg.batch_size) {
      const int count = std::min(train_cfg.batch_size, n - start);
      const int chunks = std::min(kGradChunks, count);

      std::vector<BatchGrad> partial(chunks);
      for (auto& pg : partial) {
        pg.sums.reserve(params.size());
        for (int p : params) pg.sums.emplace_back(graph.node(p).shape);
      }
      parallel_for_state(
          chunks, [] { return Tape<float>(); },
          [&](long long chunk, Tape<float>& tape) {
            BatchGrad& pg = partial[chunk];
            const int lo = start + static_cast<int>(chunk) * count / chunks;
            const int hi = start + static_cast<int>(chunk + 1) * count / chunks;
            for (int k = lo; k < hi; ++k) {
              const int idx = order[k];
              const Image img = train_split.image(idx);
              const Tensor<float>& loss =
                  forward(graph, loss_node, {{in_node, &img}}, train_split.labels[idx], tape);
              pg.loss += loss.data[0];
              backward(graph, tape);
              for (size_t p = 0; p < params.size(); ++p) {
                const Tensor<float>& g = tape.grad[params[p]];
                for (long long i = 0; i < g.size(); ++i) pg.sums[p].data[i] += g.data[i];
              }
            }
          });

      double batch_loss = 0.0;
      for (const auto& pg : partial) batch_loss += pg.loss;
      batch_loss /= count;
      if (!std::isfinite(batch_loss))
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                 ", batch starting at " + std::to_string(start));

      const float inv_count = 1.0f / static_cast<float>(count);
      for (size_t p = 0; p < params.size(); ++p) {
        Tensor<float>& w = graph.param_value(params[p]);
        Tensor<float> mean_grad(w.shape);
        for (long long i = 0; i < w.size(); ++i) {
          float g = 0.0f;
          for (int chunk = 0; chunk < chunks; ++chunk) g += partial[chunk].sums[p].data[i];
          mean_grad.data[i] = g * inv_count;
        }
        sgd_update(w, mean_grad, velocity[p], lr, train_cfg.momentum, train_cfg.nesterov,
                   train_cfg.weight_decay);
      }
    }

    const double val_acc = eval_train_val();
    meta.epochs_run = epoch + 1;
    meta.final_train_val_accuracy = val_acc;
    if (val_acc > best_val) {
      best_val = val_acc;
      epochs_without_improvement = 0;
    } else {  // ties count as no improvement
      if (++epochs_without_improvement >= train_cfg.patience) {
        lr *= train_cfg.lr_decay;
        epochs_without_improvement = 0;
      }
    }
  }

  if (train_cfg.epochs == 0) meta.final_train_val_accuracy = eval_train_val();
  meta.final_learning_rate = lr;
  return TrainedModel(model_cfg, snapshot_model(), meta);
}

// ---------------------------------------------------------------------------
// model file: magic, version, config, meta, little-endian f32 weight blobs
// ---------------------------------------------------------------------------

namespace {
constexpr char kModelMagic[4] = {'K', 'T', 'N', 'M'};
constexpr uint32_t kModelVersion = 1;
}  // namespace

void TrainedModel::save(const std::string& path) const {
  auto out = io::open_out(path);
  io::write_bytes(out, kModelMagic, 4);
  io::write_u32(out, kModelVersion);
  io::write_i32(out, cfg_.height);
  io::write_i32(out, cfg_.width);
  io::write_i32(out, cfg_.channels);
  io::write_i32(out, cfg_.classes);
  io::write_u32(out, static_cast<uint32_t>(cfg_.conv_widths.size()));
  for (int w : cfg_.conv_widths) io::write_i32(out, w);
  io::write_i32(out, cfg_.embed_dim);
  io::write_f32(out, cfg_.input_mean);
  io::write_f32(out, cfg_.input_scale);
  io::write_u64(out, cfg_.seed);
  io::write_i32(out, meta_.epochs_run);
  io::write_f64(out, meta_.final_train_val_accuracy);
  io::write_f64(out, meta_.final_learning_rate);
  io::write_u32(out, static_cast<uint32_t>(weights_.size()));
  for (const auto& w : weights_) {
    io::write_u32(out, static_cast<uint32_t>(w.shape.size()));
    for (int d : w.shape) io::write_i32(out, d);
    io::write_f32_vec(out, w.data);
  }
}

TrainedModel TrainedModel::load(const std::string& path, int expected_classes) {
  auto in = io::open_in(path);
  io::expect_magic(in, kModelMagic, "model file");
  io::expect_version(in, kModelVersion, "model file");
  ModelConfig cfg;
  cfg.height = io::read_i32(in, "model config");
  cfg.width = io::read_i32(in, "model config");
  cfg.channels = io::read_i32(in, "model config");
  cfg.classes = io::read_i32(in, "model config");
  const uint32_t blocks = io::read_u32(in, "model config");
  if (blocks > 8) throw std::runtime_error("model file: corrupt block count");
  cfg.conv_widths.resize(blocks);
  for (auto& w : cfg.conv_widths) w = io::read_i32(in, "model config");
  cfg.embed_dim = io::read_i32(in, "model config");
  cfg.input_mean = io::read_f32(in, "model config");
  cfg.input_scale = io::read_f32(in, "model config");
  cfg.seed = io::read_u64(in, "model config");
  if (expected_classes >= 0 && cfg.classes != expected_classes)
    throw std::runtime_error("model file: holds " + std::to_string(cfg.classes) +
                             " classes but " + std::to_string(expected_classes) +
                             " were requested");
  TrainMeta meta;
  meta.epochs_run = io::read_i32(in, "model meta");
  meta.final_train_val_accuracy = io::read_f64(in, "model meta");
  meta.final_learning_rate = io::read_f64(in, "model meta");
  const uint32_t n_weights = io::read_u32(in, "model weights");
  std::vector<Tensor<float>> weights(n_weights);
  for (auto& w : weights) {
    const uint32_t dims = io::read_u32(in, "model weights");
    if (dims > 4) throw std::runtime_error("model file: corrupt weight rank");
    Shape shape(dims);
    for (auto& d : shape) d = io::read_i32(in, "model weights");
    w = Tensor<float>(shape);
    io::read_f32_vec(in, w.data, static_cast<size_t>(shape_numel(shape)), "model weights");
  }
  return TrainedModel(cfg, std::move(weights), meta);
}

}  // namespace katana
