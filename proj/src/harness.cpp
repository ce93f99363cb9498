#include "katana/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "katana/io.hpp"
#include "katana/rng.hpp"

namespace katana {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

uint64_t purpose_id(SplitTag split, const std::string& attack_name, int repeat) {
  uint64_t h = fnv1a64(attack_name.data(), attack_name.size());
  const int tag[2] = {static_cast<int>(split), repeat};
  return fnv1a64(tag, sizeof(tag), h);
}

Matrix slice_rows(const Matrix& m, int n) {
  Matrix out(n, m.cols);
  std::copy(m.data.begin(), m.data.begin() + static_cast<size_t>(n) * m.cols, out.data.begin());
  return out;
}

double tta_accuracy(const std::vector<Matrix>& blocks, const std::vector<int>& labels) {
  int hits = 0;
  for (size_t k = 0; k < blocks.size(); ++k) hits += tta_predict(blocks[k]) == labels[k];
  return 100.0 * hits / static_cast<double>(labels.size());
}

struct Welford {
  int n = 0;
  double mean = 0, m2 = 0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  double stddev() const { return n > 1 ? std::sqrt(m2 / (n - 1)) : 0.0; }
};

}  // namespace

std::string ResultsTable::to_csv() const {
  std::string out = "dataset,defense,attack,clean_accuracy,adversarial_accuracy,seed\n";
  for (const auto& row : rows) {
    out += row.dataset + "," + row.defense + "," + row.attack + "," + pct(row.clean_accuracy) +
           "," + (row.has_adv ? pct(row.adv_accuracy) : std::string("na")) + "," +
           std::to_string(row.seed) + "\n";
  }
  return out;
}

double plain_accuracy(const TrainedModel& model, const std::vector<Image>& images,
                      const std::vector<int>& labels) {
  const Matrix logits = model.predict_logits(images);
  int hits = 0;
  for (int i = 0; i < logits.rows; ++i) {
    const float* row = logits.row(i);
    int label = 0;
    for (int c = 1; c < logits.cols; ++c)
      if (row[c] > row[label]) label = c;
    hits += label == labels[i];
  }
  return 100.0 * hits / static_cast<double>(labels.size());
}

ProvisionedData provision_dataset(const DatasetConfig& cfg) {
  Dataset train_pool, test_pool;
  switch (cfg.kind) {
    case DatasetKind::kSynthetic: {
      const int total = cfg.train_count + cfg.test_count;
      if (total % cfg.classes != 0)
        throw std::invalid_argument("dataset: train+test = " + std::to_string(total) +
                                    " must be divisible by classes = " +
                                    std::to_string(cfg.classes));
      const Dataset all =
          generate_synthetic(cfg.classes, total / cfg.classes, cfg.size, cfg.seed);
      SplitSpec spec;
      spec.seed = hash_combine(cfg.seed, 0x7E57);
      spec.test_val_count = cfg.test_count;
      SplitResult split = split_test_val(all, spec);
      train_pool = std::move(split.major);
      test_pool = std::move(split.minor);
      break;
    }
    case DatasetKind::kCifar10: {
      Cifar10Data data = load_cifar10_binary(cfg.dir);
      train_pool = std::move(data.train);
      test_pool = std::move(data.test);
      break;
    }
    case DatasetKind::kRaw: {
      const Dataset all = load_raw(cfg.path);
      SplitSpec spec;
      spec.seed = hash_combine(cfg.seed, 0x7E57);
      spec.test_val_count = cfg.test_count;
      SplitResult split = split_test_val(all, spec);
      train_pool = std::move(split.major);
      test_pool = std::move(split.minor);
      break;
    }
  }
  // honor requested sizes when the source is larger
  if (cfg.train_count > 0 && cfg.train_count < train_pool.size()) {
    SplitSpec spec;
    spec.seed = hash_combine(cfg.seed, 0x731A);
    spec.test_val_count = cfg.train_count;
    train_pool = split_test_val(train_pool, spec).minor;
  }
  if (cfg.test_count > 0 && cfg.test_count < test_pool.size()) {
    SplitSpec spec;
    spec.seed = hash_combine(cfg.seed, 0x7E5B);
    spec.test_val_count = cfg.test_count;
    test_pool = split_test_val(test_pool, spec).minor;
  }

  ProvisionedData out;
  SplitSpec tv_spec;
  tv_spec.seed = cfg.seed;
  tv_spec.train_val_fraction = cfg.train_val_fraction;
  SplitResult tv = split_train_val(train_pool, tv_spec);
  out.train = std::move(tv.major);
  out.train_val = std::move(tv.minor);

  SplitSpec test_spec;
  test_spec.seed = cfg.seed;
  test_spec.test_val_count = cfg.test_val_count;
  SplitResult ts = split_test_val(test_pool, test_spec);
  out.test = std::move(ts.major);
  out.test_val = std::move(ts.minor);
  out.test_indices = std::move(ts.major_indices);
  out.test_val_indices = std::move(ts.minor_indices);
  return out;
}

Harness::Harness(ExperimentConfig cfg, std::string out_dir)
    : cfg_(std::move(cfg)), out_dir_(std::move(out_dir)), cache_((fs::path(out_dir_) / "cache").string()) {
  cfg_.validate();
  fs::create_directories(out_dir_);
  std::ofstream echo(fs::path(out_dir_) / "resolved_config.cfg");
  echo << config_echo(cfg_);
}

const ProvisionedData& Harness::data() {
  if (!data_) data_ = provision_dataset(cfg_.dataset);
  return *data_;
}

const TrainedModel& Harness::model() {
  if (!model_) {
    const auto t0 = std::chrono::steady_clock::now();
    model_ = train(data().train, data().train_val, cfg_.model, cfg_.train);
    train_seconds_ = seconds_since(t0);
    model_->save((fs::path(out_dir_) / "model.bin").string());
  }
  return *model_;
}

void Harness::set_model(TrainedModel m) {
  if (m.config().classes != cfg_.model.classes)
    throw std::invalid_argument("harness: model holds " + std::to_string(m.config().classes) +
                                " classes but the config expects " +
                                std::to_string(cfg_.model.classes));
  model_ = std::move(m);
}

std::map<std::string, KatanaModel> Harness::fit_katana_heads(const std::string& mode) {
  std::map<std::string, KatanaModel> heads;
  const FeatureKind kind = cfg_.eval.feature_kind;
  if (mode == "global") {
    std::vector<std::string> all;
    for (const auto& a : cfg_.attacks) all.push_back(a.label());
    heads.emplace("global", fit_katana_head(all, cfg_.eval.head, kind, fnv1a64("global", 6)));
    return heads;
  }
  for (const auto& atk : cfg_.attacks) {
    const std::string name = atk.label();
    const auto fit_set = attacks_for_mode(mode, name);
    std::vector<std::string> fit_names;
    for (const auto* a : fit_set) fit_names.push_back(a->label());
    heads.emplace(name, fit_katana_head(fit_names, cfg_.eval.head, kind,
                                        hash_combine(fnv1a64(mode.data(), mode.size()),
                                                     fnv1a64(name.data(), name.size()))));
  }
  return heads;
}

void Harness::ensure_ensemble() {
  if (!ensemble_.empty()) return;
  // independently seeded models; the attacker only ever sees the surrogate
  for (int k = 0; k < cfg_.eval.ensemble_size; ++k) {
    ModelConfig mc = cfg_.model;
    mc.seed = hash_combine(cfg_.model.seed, 0xE17 + k);
    TrainConfig tc = cfg_.train;
    tc.seed = hash_combine(cfg_.train.seed, 0xE17 + k);
    ensemble_.push_back(train(data().train, data().train_val, mc, tc));
  }
}

const AttackBatchResult& Harness::adversarial(const std::string& attack_name, SplitTag split) {
  auto& store = split == SplitTag::kTest ? adv_test_ : adv_tv_;
  const auto it = store.find(attack_name);
  if (it != store.end()) return it->second;
  const AttackConfig* atk = nullptr;
  for (const auto& a : cfg_.attacks)
    if (a.label() == attack_name) atk = &a;
  if (!atk) throw std::invalid_argument("harness: unknown attack '" + attack_name + "'");
  const Dataset& ds = split == SplitTag::kTest ? data().test : data().test_val;
  const uint64_t seed =
      hash_combine(cfg_.eval.seed, purpose_id(split, "craft:" + attack_name, 0));
  const auto t0 = std::chrono::steady_clock::now();
  AttackBatchResult result = attack_batch(model(), ds, *atk, seed);
  attack_seconds_[attack_name] += seconds_since(t0);
  return store.emplace(attack_name, std::move(result)).first->second;
}

std::vector<Matrix> Harness::features(SplitTag split, const std::string& attack_name,
                                      FeatureKind kind, int repeat,
                                      const TtaConfig* tta_override) {
  const TtaConfig& tta = tta_override ? *tta_override : cfg_.tta;
  const Dataset& ds = split == SplitTag::kTest ? data().test : data().test_val;
  const std::vector<Image>* images_ptr;
  std::vector<Image> clean_images;
  if (attack_name.empty()) {
    clean_images = dataset_images(ds);
    images_ptr = &clean_images;
  } else {
    images_ptr = &adversarial(attack_name, split).images;
  }
  // probs are the softmax of the cached logits entry
  const FeatureKind storage = kind == FeatureKind::kProbs ? FeatureKind::kLogits : kind;
  CacheKey key;
  key.image_set_id = image_set_id(*images_ptr);
  key.model_id = model().content_hash();
  key.tta_hash = tta.content_hash();
  key.seed = hash_combine(cfg_.eval.seed, purpose_id(split, attack_name, repeat));
  key.kind = storage;
  std::vector<Matrix> blocks = cache_.get_or_compute(key, model(), *images_ptr, tta);
  if (kind == FeatureKind::kProbs) {
    for (Matrix& m : blocks) {
      std::vector<float> probs(m.cols);
      for (int r = 0; r < m.rows; ++r) {
        softmax_row(m.row(r), m.cols, probs.data());
        std::copy(probs.begin(), probs.end(), m.row(r));
      }
    }
  }
  return blocks;
}

std::vector<const AttackConfig*> Harness::attacks_for_mode(const std::string& mode,
                                                           const std::string& tested) const {
  std::vector<const AttackConfig*> out;
  if (mode == "per-attack") {
    for (const auto& a : cfg_.attacks)
      if (a.label() == tested) out.push_back(&a);
  } else if (mode == "global") {
    for (const auto& a : cfg_.attacks) out.push_back(&a);
  } else if (mode == "loocv") {
    AttackKind tested_kind = AttackKind::kFgsm;
    bool found = false;
    for (const auto& a : cfg_.attacks)
      if (a.label() == tested) {
        tested_kind = a.kind;
        found = true;
      }
    if (!found) throw std::invalid_argument("harness: unknown tested attack '" + tested + "'");
    // attacks of the tested kind are excluded as a family (both powers of the
    // same method leave the fit together)
    for (const auto& a : cfg_.attacks)
      if (a.kind != tested_kind) out.push_back(&a);
    if (out.empty())
      throw std::invalid_argument(
          "harness: loocv needs at least one attack of a different kind than '" + tested + "'");
  } else {
    throw std::invalid_argument("harness: unknown katana mode '" + mode + "'");
  }
  return out;
}

KatanaModel Harness::fit_katana_head(const std::vector<std::string>& fit_attacks,
                                     const KatanaHeadConfig& head_cfg, FeatureKind kind,
                                     uint64_t head_seed_salt) {
  // Protocol hygiene: the head sees test-val features only. The split tag is
  // pinned here; any other caller path cannot reach this fit.
  const Dataset& tv = data().test_val;
  const std::vector<Matrix> normal_blocks = features(SplitTag::kTestVal, "", kind);
  if (static_cast<int>(normal_blocks.size()) != tv.size())
    throw std::logic_error("harness: katana fit features are not aligned with test-val");

  const KatanaLayout layout{cfg_.tta.n, model().feature_width(kind), kind,
                            cfg_.eval.feature_ordering};
  std::vector<TtaFeatures> normal_feats, adv_feats;
  normal_feats.reserve(normal_blocks.size());
  for (const Matrix& m : normal_blocks) normal_feats.push_back({m, kind});
  for (const std::string& attack_name : fit_attacks) {
    const std::vector<Matrix> adv_blocks = features(SplitTag::kTestVal, attack_name, kind);
    for (const Matrix& m : adv_blocks) adv_feats.push_back({m, kind});
  }

  KatanaHeadConfig seeded = head_cfg;
  seeded.forest.seed = hash_combine(head_cfg.forest.seed, head_seed_salt);
  seeded.logreg.seed = hash_combine(head_cfg.logreg.seed, head_seed_salt);
  return katana_fit(normal_feats, adv_feats, tv.labels, cfg_.model.classes, layout, seeded,
                    fit_attacks);
}

double Harness::head_accuracy(const KatanaModel& head, const std::vector<Matrix>& blocks,
                              const std::vector<int>& labels, FeatureKind kind) const {
  int hits = 0;
  for (size_t k = 0; k < blocks.size(); ++k)
    hits += katana_predict(head, {blocks[k], kind}) == labels[k];
  return 100.0 * hits / static_cast<double>(labels.size());
}

ResultsTable Harness::evaluate() {
  try {
    ResultsTable table;
    const std::string& ds_name = data().test.name;
    const std::vector<int>& labels = data().test.labels;
    const std::vector<Image> clean_images = dataset_images(data().test);

    std::vector<std::string> attack_names;
    for (const auto& a : cfg_.attacks) attack_names.push_back(a.label());
    const bool no_attacks = attack_names.empty();

    for (const std::string& defense : cfg_.eval.defenses) {
      const auto t0 = std::chrono::steady_clock::now();
      auto add_row = [&](const std::string& attack, double clean, double adv, bool has_adv) {
        ResultsRow row;
        row.dataset = ds_name;
        row.defense = defense;
        row.attack = attack;
        row.clean_accuracy = clean;
        row.adv_accuracy = adv;
        row.has_adv = has_adv;
        row.seed = cfg_.eval.seed;
        row.wall_time_s = seconds_since(t0);
        table.rows.push_back(std::move(row));
      };

      if (defense == "plain") {
        const double clean = plain_accuracy(model(), clean_images, labels);
        if (no_attacks) add_row("none", clean, 0, false);
        for (const auto& name : attack_names) {
          const double adv =
              plain_accuracy(model(), adversarial(name, SplitTag::kTest).images, labels);
          add_row(name, clean, adv, true);
        }
      } else if (defense == "ensemble") {
        ensure_ensemble();
        std::vector<const TrainedModel*> models;
        for (const auto& m : ensemble_) models.push_back(&m);
        auto ens_acc = [&](const std::vector<Image>& images) {
          int hits = 0;
          for (size_t i = 0; i < images.size(); ++i)
            hits += ensemble_predict(models, images[i]) == labels[i];
          return 100.0 * hits / static_cast<double>(labels.size());
        };
        const double clean = ens_acc(clean_images);
        if (no_attacks) add_row("none", clean, 0, false);
        for (const auto& name : attack_names)
          add_row(name, clean, ens_acc(adversarial(name, SplitTag::kTest).images), true);
      } else if (defense == "tta") {
        // Eq. 5 aggregates raw logits whatever feature kind KATANA uses
        const auto clean_blocks = features(SplitTag::kTest, "", FeatureKind::kLogits);
        const double clean = tta_accuracy(clean_blocks, labels);
        if (no_attacks) add_row("none", clean, 0, false);
        for (const auto& name : attack_names) {
          const auto adv_blocks = features(SplitTag::kTest, name, FeatureKind::kLogits);
          add_row(name, clean, tta_accuracy(adv_blocks, labels), true);
        }
      } else if (defense == "katana" || defense == "katana-logreg") {
        KatanaHeadConfig head_cfg = cfg_.eval.head;
        head_cfg.kind = defense == "katana" ? KatanaHeadConfig::Kind::kForest
                                            : KatanaHeadConfig::Kind::kLogreg;
        const FeatureKind kind = cfg_.eval.feature_kind;
        const auto clean_blocks = features(SplitTag::kTest, "", kind);
        if (no_attacks) {
          const KatanaModel head = fit_katana_head({}, head_cfg, kind, fnv1a64("clean", 5));
          add_row("none", head_accuracy(head, clean_blocks, labels, kind), 0, false);
        } else if (cfg_.eval.katana_mode == "global") {
          const KatanaModel head =
              fit_katana_head(attack_names, head_cfg, kind, fnv1a64("global", 6));
          const double clean = head_accuracy(head, clean_blocks, labels, kind);
          for (const auto& name : attack_names) {
            const auto adv_blocks = features(SplitTag::kTest, name, kind);
            add_row(name, clean, head_accuracy(head, adv_blocks, labels, kind), true);
          }
        } else {
          for (const auto& name : attack_names) {
            const auto fit_set = attacks_for_mode(cfg_.eval.katana_mode, name);
            std::vector<std::string> fit_names;
            for (const auto* a : fit_set) fit_names.push_back(a->label());
            const KatanaModel head =
                fit_katana_head(fit_names, head_cfg, kind, fnv1a64(name.data(), name.size()));
            const auto adv_blocks = features(SplitTag::kTest, name, kind);
            add_row(name, head_accuracy(head, clean_blocks, labels, kind),
                    head_accuracy(head, adv_blocks, labels, kind), true);
          }
        }
      }
    }
    return table;
  } catch (const std::exception& e) {
    write_manifest(nullptr, e.what());
    throw;
  }
}

ResultsTable Harness::transfer_eval(const std::string& mode) {
  ResultsTable table;
  const std::vector<int>& labels = data().test.labels;
  const FeatureKind kind = cfg_.eval.feature_kind;
  const auto clean_blocks = features(SplitTag::kTest, "", kind);
  for (const auto& atk : cfg_.attacks) {
    const std::string name = atk.label();
    const auto fit_set = attacks_for_mode(mode, name);
    std::vector<std::string> fit_names;
    for (const auto* a : fit_set) fit_names.push_back(a->label());
    const KatanaModel head = fit_katana_head(
        fit_names, cfg_.eval.head, kind,
        hash_combine(fnv1a64(mode.data(), mode.size()), fnv1a64(name.data(), name.size())));
    const auto adv_blocks = features(SplitTag::kTest, name, kind);
    ResultsRow row;
    row.dataset = data().test.name;
    row.defense = "katana-" + mode;
    row.attack = name;
    row.clean_accuracy = head_accuracy(head, clean_blocks, labels, kind);
    row.adv_accuracy = head_accuracy(head, adv_blocks, labels, kind);
    row.has_adv = true;
    row.seed = cfg_.eval.seed;
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string Harness::ablate_n_csv() {
  if (cfg_.attacks.empty())
    throw std::invalid_argument("ablate-n: at least one attack must be configured");
  std::vector<int> n_values = cfg_.eval.n_values;
  std::sort(n_values.begin(), n_values.end());
  const int n_max = n_values.back();
  TtaConfig wide = cfg_.tta;
  wide.n = n_max;

  std::string csv = "attack,defense,n,clean_mean,clean_std,adv_mean,adv_std\n";
  const std::vector<int>& labels = data().test.labels;
  const FeatureKind kind = cfg_.eval.feature_kind;
  for (const auto& atk : cfg_.attacks) {
    const std::string name = atk.label();
    // per (defense, n): accuracy samples over repeats
    std::map<std::pair<std::string, int>, std::pair<Welford, Welford>> stats;
    for (int repeat = 0; repeat < cfg_.eval.repeats; ++repeat) {
      // max-N blocks once per repeat; smaller counts are row prefixes since
      // augmentation i has its own seed substream
      const auto test_clean = features(SplitTag::kTest, "", kind, repeat, &wide);
      const auto test_adv = features(SplitTag::kTest, name, kind, repeat, &wide);
      const auto tv_clean = features(SplitTag::kTestVal, "", kind, repeat, &wide);
      const auto tv_adv = features(SplitTag::kTestVal, name, kind, repeat, &wide);
      for (const int n : n_values) {
        auto slice_all = [&](const std::vector<Matrix>& blocks) {
          std::vector<Matrix> out;
          out.reserve(blocks.size());
          for (const auto& m : blocks) out.push_back(slice_rows(m, n));
          return out;
        };
        const auto test_clean_n = slice_all(test_clean);
        const auto test_adv_n = slice_all(test_adv);
        auto& tta_stats = stats[{"tta", n}];
        tta_stats.first.add(tta_accuracy(test_clean_n, labels));
        tta_stats.second.add(tta_accuracy(test_adv_n, labels));

        const KatanaLayout layout{n, model().feature_width(kind), kind,
                                  cfg_.eval.feature_ordering};
        std::vector<TtaFeatures> normal_feats, adv_feats;
        for (const auto& m : slice_all(tv_clean)) normal_feats.push_back({m, kind});
        for (const auto& m : slice_all(tv_adv)) adv_feats.push_back({m, kind});
        KatanaHeadConfig seeded = cfg_.eval.head;
        seeded.forest.seed = hash_combine(seeded.forest.seed, 0xAB1A + repeat);
        const KatanaModel head = katana_fit(normal_feats, adv_feats, data().test_val.labels,
                                            cfg_.model.classes, layout, seeded, {name});
        auto& kat_stats = stats[{"katana", n}];
        kat_stats.first.add(head_accuracy(head, test_clean_n, labels, kind));
        kat_stats.second.add(head_accuracy(head, test_adv_n, labels, kind));
      }
    }
    for (const auto& [key, acc] : stats)
      csv += name + "," + key.first + "," + std::to_string(key.second) + "," +
             pct(acc.first.mean) + "," + pct(acc.first.stddev()) + "," + pct(acc.second.mean) +
             "," + pct(acc.second.stddev()) + "\n";
  }
  return csv;
}

std::string Harness::ablate_katana_csv() {
  if (cfg_.attacks.empty())
    throw std::invalid_argument("ablate-katana: at least one attack must be configured");
  const std::string attack_name = cfg_.attacks.front().label();
  const std::vector<int>& labels = data().test.labels;

  std::string csv = "features,transforms,sigma_max,clean_accuracy,adversarial_accuracy\n";
  for (const FeatureKind kind :
       {FeatureKind::kLogits, FeatureKind::kProbs, FeatureKind::kEmbeddings}) {
    for (const TtaStrength strength : {TtaStrength::kSoft, TtaStrength::kHard}) {
      for (const float sigma : cfg_.eval.sigma_values) {
        TtaConfig cell = strength == TtaStrength::kSoft ? TtaConfig::soft() : TtaConfig::hard();
        cell.sigma_max = sigma;
        cell.mirror_enabled = cfg_.tta.mirror_enabled;
        cell.n = cfg_.tta.n;

        const auto tv_clean = features(SplitTag::kTestVal, "", kind, 0, &cell);
        const auto tv_adv = features(SplitTag::kTestVal, attack_name, kind, 0, &cell);
        const KatanaLayout layout{cell.n, model().feature_width(kind), kind,
                                  cfg_.eval.feature_ordering};
        std::vector<TtaFeatures> normal_feats, adv_feats;
        for (const auto& m : tv_clean) normal_feats.push_back({m, kind});
        for (const auto& m : tv_adv) adv_feats.push_back({m, kind});
        const KatanaModel head =
            katana_fit(normal_feats, adv_feats, data().test_val.labels, cfg_.model.classes,
                       layout, cfg_.eval.head, {attack_name});

        const auto test_clean = features(SplitTag::kTest, "", kind, 0, &cell);
        const auto test_adv = features(SplitTag::kTest, attack_name, kind, 0, &cell);
        char sigma_buf[24];
        std::snprintf(sigma_buf, sizeof(sigma_buf), "%g", sigma);
        csv += std::string(feature_kind_name(kind)) + "," +
               (strength == TtaStrength::kSoft ? "soft" : "hard") + "," + sigma_buf + "," +
               pct(head_accuracy(head, test_clean, labels, kind)) + "," +
               pct(head_accuracy(head, test_adv, labels, kind)) + "\n";
      }
    }
  }
  return csv;
}

void Harness::write_results(const ResultsTable& table) const {
  std::ofstream out(fs::path(out_dir_) / "results.csv", std::ios::binary);
  out << table.to_csv();
}

void Harness::write_manifest(const ResultsTable* table, const std::string& error) const {
  json manifest;
  manifest["config_echo_file"] = "resolved_config.cfg";
  manifest["seed"] = cfg_.eval.seed;
  if (data_) {
    manifest["dataset"] = {{"name", data_->test.name},
                           {"train", data_->train.size()},
                           {"train_val", data_->train_val.size()},
                           {"test", data_->test.size()},
                           {"test_val", data_->test_val.size()},
                           {"test_hash", data_->test.content_hash()},
                           {"test_val_hash", data_->test_val.content_hash()}};
  }
  if (model_) {
    manifest["model"] = {{"hash", model_->content_hash()},
                         {"epochs_run", model_->meta().epochs_run},
                         {"train_val_accuracy", model_->meta().final_train_val_accuracy},
                         {"train_seconds", train_seconds_}};
  }
  json attacks = json::array();
  for (const auto& [name, result] : adv_test_) {
    float mx = 0, mean = 0;
    for (float v : result.linf) {
      mx = std::max(mx, v);
      mean += v;
    }
    if (!result.linf.empty()) mean /= static_cast<float>(result.linf.size());
    json entry = {{"name", name},
                  {"split", "test"},
                  {"max_linf", mx},
                  {"mean_linf", mean},
                  {"seconds", attack_seconds_.count(name) ? attack_seconds_.at(name) : 0.0}};
    attacks.push_back(entry);
  }
  manifest["attacks"] = attacks;
  manifest["cache"] = {{"hits", cache_.hits()}, {"misses", cache_.misses()}};
  if (table) {
    json rows = json::array();
    Welford katana_clean;
    for (const auto& row : table->rows) {
      rows.push_back({{"dataset", row.dataset},
                      {"defense", row.defense},
                      {"attack", row.attack},
                      {"clean_accuracy", row.clean_accuracy},
                      {"adversarial_accuracy", row.has_adv ? json(row.adv_accuracy) : json()},
                      {"seed", row.seed},
                      {"wall_time_s", row.wall_time_s}});
      if (row.defense == "katana") katana_clean.add(row.clean_accuracy);
    }
    manifest["rows"] = rows;
    if (katana_clean.n > 0)
      manifest["katana_clean"] = {{"mean", katana_clean.mean}, {"std", katana_clean.stddev()}};
  }
  if (!error.empty()) manifest["error"] = error;
  std::ofstream out(fs::path(out_dir_) / "manifest.json");
  out << manifest.dump(2) << "\n";
}

}  // namespace katana
