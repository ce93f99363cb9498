#include "katana/classify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "katana/io.hpp"

namespace katana {

const char* feature_ordering_name(FeatureOrdering ordering) {
  return ordering == FeatureOrdering::kGeneration ? "generation" : "sorted-per-class";
}

FeatureOrdering feature_ordering_from_name(const std::string& name) {
  if (name == "generation") return FeatureOrdering::kGeneration;
  if (name == "sorted-per-class" || name == "sorted") return FeatureOrdering::kSortedPerClass;
  throw std::invalid_argument("unknown feature ordering '" + name +
                              "' (expected generation|sorted-per-class)");
}

int tta_predict(const Matrix& logits) {
  if (logits.rows < 1 || logits.cols < 1)
    throw std::invalid_argument("tta_predict: empty logits matrix");
  int best = 0;
  double best_sum = 0.0;
  for (int c = 0; c < logits.cols; ++c) {
    double sum = 0.0;
    for (int i = 0; i < logits.rows; ++i) sum += logits.at(i, c);
    if (c == 0 || sum > best_sum) {
      best = c;
      best_sum = sum;
    }
  }
  return best;
}

int tta_predict_prob_mean(const Matrix& logits) {
  if (logits.rows < 1 || logits.cols < 1)
    throw std::invalid_argument("tta_predict_prob_mean: empty logits matrix");
  std::vector<double> mean(logits.cols, 0.0);
  std::vector<float> probs(logits.cols);
  for (int i = 0; i < logits.rows; ++i) {
    softmax_row(logits.row(i), logits.cols, probs.data());
    for (int c = 0; c < logits.cols; ++c) mean[c] += probs[c];
  }
  int best = 0;
  for (int c = 1; c < logits.cols; ++c)
    if (mean[c] > mean[best]) best = c;
  return best;
}

std::vector<float> build_katana_features(const TtaFeatures& f, const KatanaLayout& layout) {
  if (f.m.rows != layout.n || f.m.cols != layout.width)
    throw std::invalid_argument("katana features: block is " + std::to_string(f.m.rows) + "x" +
                                std::to_string(f.m.cols) + " but the layout expects " +
                                std::to_string(layout.n) + "x" + std::to_string(layout.width));
  if (f.kind != layout.kind)
    throw std::invalid_argument(std::string("katana features: block kind '") +
                                feature_kind_name(f.kind) + "' does not match layout kind '" +
                                feature_kind_name(layout.kind) + "'");
  std::vector<float> out(f.m.data);
  if (layout.ordering == FeatureOrdering::kSortedPerClass) {
    // each column sorted descending, written back in column-major runs of the
    // row-major vector
    std::vector<float> column(layout.n);
    for (int c = 0; c < layout.width; ++c) {
      for (int i = 0; i < layout.n; ++i) column[i] = f.m.at(i, c);
      std::sort(column.begin(), column.end(), std::greater<float>());
      for (int i = 0; i < layout.n; ++i) out[static_cast<size_t>(i) * layout.width + c] = column[i];
    }
  }
  return out;
}

KatanaModel katana_fit(const std::vector<TtaFeatures>& normal_feats,
                       const std::vector<TtaFeatures>& adv_feats, const std::vector<int>& labels,
                       int classes, const KatanaLayout& layout, const KatanaHeadConfig& head_cfg,
                       std::vector<std::string> attack_tags) {
  // adv_feats may stack several attacks' blocks: any multiple of the label
  // count, aligned per attack.
  if (normal_feats.size() != labels.size() ||
      (!labels.empty() && adv_feats.size() % labels.size() != 0))
    throw std::invalid_argument("katana_fit: feature lists and labels are misaligned (" +
                                std::to_string(normal_feats.size()) + " normal, " +
                                std::to_string(adv_feats.size()) + " adversarial, " +
                                std::to_string(labels.size()) + " labels)");
  if (normal_feats.empty()) throw std::invalid_argument("katana_fit: no training features");

  const int rows = static_cast<int>(normal_feats.size() + adv_feats.size());
  const int dim = layout.n * layout.width;
  Matrix X(rows, dim);
  std::vector<int> y(rows);
  for (size_t k = 0; k < normal_feats.size(); ++k) {
    const std::vector<float> row = build_katana_features(normal_feats[k], layout);
    std::copy(row.begin(), row.end(), X.row(static_cast<int>(k)));
    y[k] = labels[k];
  }
  for (size_t k = 0; k < adv_feats.size(); ++k) {
    const std::vector<float> row = build_katana_features(adv_feats[k], layout);
    std::copy(row.begin(), row.end(), X.row(static_cast<int>(normal_feats.size() + k)));
    y[normal_feats.size() + k] = labels[k % labels.size()];
  }

  KatanaModel model;
  model.layout = layout;
  model.classes = classes;
  model.attack_tags = std::move(attack_tags);
  if (head_cfg.kind == KatanaHeadConfig::Kind::kForest)
    model.head = fit_forest(X, y, head_cfg.forest);
  else
    model.head = fit_logreg(X, y, head_cfg.logreg.l2, head_cfg.logreg.epochs, head_cfg.logreg.lr,
                            head_cfg.logreg.seed);
  return model;
}

int katana_predict(const KatanaModel& model, const TtaFeatures& f) {
  const std::vector<float> x = build_katana_features(f, model.layout);
  if (std::holds_alternative<ForestModel>(model.head))
    return std::get<ForestModel>(model.head).predict(x).label;
  return linear_predict(std::get<LinearHead>(model.head), x).label;
}

int ensemble_predict(const std::vector<const TrainedModel*>& models, const Image& x) {
  if (models.empty()) throw std::invalid_argument("ensemble_predict: no models");
  const int classes = models[0]->config().classes;
  std::vector<int> votes(classes, 0);
  std::vector<double> logit_sums(classes, 0.0);
  Tape<float> tape;
  for (const TrainedModel* m : models) {
    if (m->config().classes != classes)
      throw std::invalid_argument("ensemble_predict: class count mismatch");
    const ModelGraph& mg = m->graph();
    const Tensor<float>& l = forward(mg.graph, mg.logits, {{mg.input, &x}}, -1, tape);
    int label = 0;
    for (int c = 1; c < classes; ++c)
      if (l.data[c] > l.data[label]) label = c;
    votes[label]++;
    for (int c = 0; c < classes; ++c) logit_sums[c] += l.data[c];
  }
  int best = 0;
  for (int c = 1; c < classes; ++c) {
    if (votes[c] > votes[best] || (votes[c] == votes[best] && logit_sums[c] > logit_sums[best]))
      best = c;
  }
  return best;
}

// ---------------------------------------------------------------------------
// serialization: layout metadata plus the embedded head blob
// ---------------------------------------------------------------------------

namespace {
constexpr char kKatanaMagic[4] = {'K', 'T', 'N', 'K'};
constexpr uint32_t kKatanaVersion = 1;
}  // namespace

void KatanaModel::save(const std::string& path) const {
  auto out = io::open_out(path);
  io::write_bytes(out, kKatanaMagic, 4);
  io::write_u32(out, kKatanaVersion);
  io::write_i32(out, layout.n);
  io::write_i32(out, layout.width);
  io::write_u32(out, static_cast<uint32_t>(layout.kind));
  io::write_u32(out, static_cast<uint32_t>(layout.ordering));
  io::write_i32(out, classes);
  io::write_u32(out, static_cast<uint32_t>(attack_tags.size()));
  for (const auto& tag : attack_tags) io::write_string(out, tag);
  std::ostringstream head_blob(std::ios::binary);
  if (std::holds_alternative<ForestModel>(head)) {
    io::write_u32(out, 0);
    std::get<ForestModel>(head).save(head_blob);
  } else {
    io::write_u32(out, 1);
    std::get<LinearHead>(head).save(head_blob);
  }
  const std::string blob = head_blob.str();
  io::write_u64(out, blob.size());
  io::write_bytes(out, blob.data(), blob.size());
}

KatanaModel KatanaModel::load(const std::string& path, const KatanaLayout* expected) {
  auto in = io::open_in(path);
  io::expect_magic(in, kKatanaMagic, "katana model file");
  io::expect_version(in, kKatanaVersion, "katana model file");
  KatanaModel model;
  model.layout.n = io::read_i32(in, "katana layout");
  model.layout.width = io::read_i32(in, "katana layout");
  model.layout.kind = static_cast<FeatureKind>(io::read_u32(in, "katana layout"));
  model.layout.ordering = static_cast<FeatureOrdering>(io::read_u32(in, "katana layout"));
  model.classes = io::read_i32(in, "katana layout");
  const uint32_t n_tags = io::read_u32(in, "katana tags");
  model.attack_tags.resize(n_tags);
  for (auto& tag : model.attack_tags) tag = io::read_string(in, "katana tags");
  const uint32_t head_kind = io::read_u32(in, "katana head");
  const uint64_t blob_size = io::read_u64(in, "katana head");
  if (blob_size > (1ull << 32))
    throw std::runtime_error("katana model file: unreasonable head size");
  std::string blob(blob_size, '\0');
  io::read_bytes(in, blob.data(), blob_size, "katana head");
  std::istringstream head_blob(blob, std::ios::binary);
  if (head_kind == 0)
    model.head = ForestModel::load(head_blob);
  else if (head_kind == 1)
    model.head = LinearHead::load(head_blob);
  else
    throw std::runtime_error("katana model file: unknown head kind " + std::to_string(head_kind));

  if (expected) {
    if (expected->n != model.layout.n)
      throw std::runtime_error("katana model file: fitted with N=" +
                               std::to_string(model.layout.n) + " but N=" +
                               std::to_string(expected->n) + " was requested");
    if (expected->width != model.layout.width)
      throw std::runtime_error("katana model file: fitted with width " +
                               std::to_string(model.layout.width) + " but width " +
                               std::to_string(expected->width) + " was requested");
    if (expected->kind != model.layout.kind || expected->ordering != model.layout.ordering)
      throw std::runtime_error("katana model file: feature kind/ordering mismatch");
  }
  return model;
}

}  // namespace katana
