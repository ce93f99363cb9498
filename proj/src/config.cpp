#include "katana/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace katana {

ConfigError::ConfigError(const std::string& file, int line_no, const std::string& field_name,
                         const std::string& message)
    : std::runtime_error(file + ":" + std::to_string(line_no) +
                         (field_name.empty() ? "" : ": field '" + field_name + "'") + ": " +
                         message),
      line(line_no),
      field(field_name) {}

namespace {

std::string trim(const std::string& s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string strip_comment(const std::string& line) {
  bool esc = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (!esc && (line[i] == '#' || line[i] == ';')) return line.substr(0, i);
    esc = line[i] == '\\';
  }
  return line;
}

}  // namespace

const RawConfig::Section* RawConfig::find(const std::string& name) const {
  for (const auto& s : sections)
    if (s.name == name) return &s;
  return nullptr;
}

RawConfig parse_raw_config_text(const std::string& text, const std::string& path) {
  RawConfig cfg;
  cfg.path = path;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  RawConfig::Section* current = nullptr;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']')
        throw ConfigError(path, line_no, "", "unterminated section header '" + body + "'");
      const std::string name = trim(body.substr(1, body.size() - 2));
      if (name.empty()) throw ConfigError(path, line_no, "", "empty section name");
      for (const auto& s : cfg.sections)
        if (s.name == name)
          throw ConfigError(path, line_no, "", "duplicate section [" + name + "]");
      cfg.sections.push_back({name, line_no, {}});
      current = &cfg.sections.back();
      continue;
    }
    const size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path, line_no, "", "expected 'key = value', got '" + body + "'");
    if (!current) throw ConfigError(path, line_no, "", "key outside of any [section]");
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError(path, line_no, "", "empty key");
    if (current->values.count(key))
      throw ConfigError(path, line_no, key, "duplicate key in [" + current->name + "]");
    current->values[key] = {value, line_no};
  }
  return cfg;
}

RawConfig parse_raw_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_raw_config_text(buf.str(), path);
}

namespace {

// Typed accessors over a section, reporting file/line/field on every error.
class SectionReader {
 public:
  SectionReader(const RawConfig& cfg, const RawConfig::Section* section)
      : cfg_(cfg), section_(section) {}

  bool has(const std::string& key) const { return section_ && section_->values.count(key); }

  std::string str(const std::string& key, const std::string& fallback) const {
    if (!has(key)) return fallback;
    return section_->values.at(key).first;
  }

  int integer(const std::string& key, int fallback) const {
    if (!has(key)) return fallback;
    const auto& [value, line] = section_->values.at(key);
    try {
      size_t pos = 0;
      const long long v = std::stoll(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return static_cast<int>(v);
    } catch (...) {
      throw ConfigError(cfg_.path, line, key, "expected an integer, got '" + value + "'");
    }
  }

  uint64_t seed(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    const auto& [value, line] = section_->values.at(key);
    try {
      size_t pos = 0;
      const uint64_t v = std::stoull(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError(cfg_.path, line, key, "expected a seed (u64), got '" + value + "'");
    }
  }

  double real(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const auto& [value, line] = section_->values.at(key);
    try {
      size_t pos = 0;
      const double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError(cfg_.path, line, key, "expected a number, got '" + value + "'");
    }
  }

  bool boolean(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const auto& [value, line] = section_->values.at(key);
    if (value == "true" || value == "on" || value == "1") return true;
    if (value == "false" || value == "off" || value == "0") return false;
    throw ConfigError(cfg_.path, line, key, "expected true/false, got '" + value + "'");
  }

  std::vector<std::string> list(const std::string& key,
                                const std::vector<std::string>& fallback) const {
    if (!has(key)) return fallback;
    const auto& [value, line] = section_->values.at(key);
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw ConfigError(cfg_.path, line, key, "expected a comma-separated list");
    return out;
  }

  std::vector<int> int_list(const std::string& key, const std::vector<int>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<int> out;
    for (const auto& item : list(key, {}))
      out.push_back(to_int(key, item));
    return out;
  }

  std::vector<float> float_list(const std::string& key, const std::vector<float>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<float> out;
    for (const auto& item : list(key, {})) out.push_back(to_float(key, item));
    return out;
  }

  Interval interval(const std::string& key, Interval fallback) const {
    if (!has(key)) return fallback;
    const auto items = list(key, {});
    if (items.size() != 2)
      throw ConfigError(cfg_.path, line_of(key), key, "expected 'lo,hi'");
    return {to_float(key, items[0]), to_float(key, items[1])};
  }

  int line_of(const std::string& key) const {
    return has(key) ? section_->values.at(key).second : (section_ ? section_->line : 0);
  }

  const RawConfig& raw() const { return cfg_; }

 private:
  int to_int(const std::string& key, const std::string& value) const {
    try {
      size_t pos = 0;
      const int v = std::stoi(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError(cfg_.path, line_of(key), key, "expected an integer, got '" + value + "'");
    }
  }
  float to_float(const std::string& key, const std::string& value) const {
    try {
      size_t pos = 0;
      const float v = std::stof(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError(cfg_.path, line_of(key), key, "expected a number, got '" + value + "'");
    }
  }

  const RawConfig& cfg_;
  const RawConfig::Section* section_;
};

TtaConfig parse_tta_section(const SectionReader& r) {
  const std::string strength = r.str("strength", "hard");
  TtaConfig tta;
  if (strength == "hard")
    tta = TtaConfig::hard();
  else if (strength == "soft")
    tta = TtaConfig::soft();
  else if (strength == "identity")
    tta = TtaConfig::identity();
  else
    throw ConfigError(r.raw().path, r.line_of("strength"), "strength",
                      "expected hard|soft|identity, got '" + strength + "'");
  tta.rotation_deg = r.interval("rotation_deg", tta.rotation_deg);
  tta.max_translate_px = r.integer("max_translate_px", tta.max_translate_px);
  tta.scale = r.interval("scale", tta.scale);
  tta.flip_prob = static_cast<float>(r.real("flip_prob", tta.flip_prob));
  tta.mirror_enabled = r.boolean("mirror", tta.mirror_enabled);
  tta.brightness = r.interval("brightness", tta.brightness);
  tta.contrast = r.interval("contrast", tta.contrast);
  tta.saturation = r.interval("saturation", tta.saturation);
  tta.hue = r.interval("hue", tta.hue);
  tta.gamma = r.interval("gamma", tta.gamma);
  tta.sigma_bmax = static_cast<float>(r.real("sigma_bmax", tta.sigma_bmax));
  tta.sigma_max = static_cast<float>(r.real("sigma_max", tta.sigma_max));
  tta.pad_target = r.integer("pad_target", tta.pad_target);
  tta.n = r.integer("n", tta.n);
  return tta;
}

}  // namespace

ExperimentConfig experiment_config_from_raw(const RawConfig& raw) {
  ExperimentConfig cfg;

  {
    SectionReader r(raw, raw.find("dataset"));
    const std::string kind = r.str("kind", "synthetic");
    if (kind == "synthetic")
      cfg.dataset.kind = DatasetKind::kSynthetic;
    else if (kind == "cifar10")
      cfg.dataset.kind = DatasetKind::kCifar10;
    else if (kind == "raw")
      cfg.dataset.kind = DatasetKind::kRaw;
    else
      throw ConfigError(raw.path, r.line_of("kind"), "kind",
                        "expected synthetic|cifar10|raw, got '" + kind + "'");
    cfg.dataset.classes = r.integer("classes", cfg.dataset.classes);
    cfg.dataset.size = r.integer("size", cfg.dataset.size);
    cfg.dataset.train_count = r.integer("train", cfg.dataset.train_count);
    cfg.dataset.test_count = r.integer("test", cfg.dataset.test_count);
    cfg.dataset.seed = r.seed("seed", cfg.dataset.seed);
    cfg.dataset.train_val_fraction = r.real("train_val_fraction", cfg.dataset.train_val_fraction);
    cfg.dataset.test_val_count = r.integer("test_val", cfg.dataset.test_val_count);
    cfg.dataset.dir = r.str("dir", "");
    cfg.dataset.path = r.str("path", "");
  }

  {
    SectionReader r(raw, raw.find("model"));
    cfg.model.height = cfg.model.width = cfg.dataset.size;
    cfg.model.channels = 3;
    cfg.model.classes = cfg.dataset.kind == DatasetKind::kCifar10 ? 10 : cfg.dataset.classes;
    cfg.model.conv_widths = r.int_list("widths", cfg.model.conv_widths);
    cfg.model.embed_dim = r.integer("embed", cfg.model.embed_dim);
    cfg.model.input_mean = static_cast<float>(r.real("input_mean", cfg.model.input_mean));
    cfg.model.input_scale = static_cast<float>(r.real("input_scale", cfg.model.input_scale));
    cfg.model.seed = r.seed("seed", cfg.model.seed);
  }

  {
    SectionReader r(raw, raw.find("train"));
    cfg.train.epochs = r.integer("epochs", cfg.train.epochs);
    cfg.train.batch_size = r.integer("batch", cfg.train.batch_size);
    cfg.train.learning_rate = static_cast<float>(r.real("lr", cfg.train.learning_rate));
    cfg.train.lr_decay = static_cast<float>(r.real("lr_decay", cfg.train.lr_decay));
    cfg.train.patience = r.integer("patience", cfg.train.patience);
    cfg.train.momentum = static_cast<float>(r.real("momentum", cfg.train.momentum));
    cfg.train.nesterov = r.boolean("nesterov", cfg.train.nesterov);
    cfg.train.weight_decay = static_cast<float>(r.real("weight_decay", cfg.train.weight_decay));
    cfg.train.seed = r.seed("seed", cfg.train.seed);
  }

  cfg.tta = parse_tta_section(SectionReader(raw, raw.find("tta")));

  for (const auto& section : raw.sections) {
    if (section.name.rfind("attack.", 0) != 0) continue;
    SectionReader r(raw, &section);
    AttackConfig atk;
    atk.name = section.name.substr(7);
    if (atk.name.empty())
      throw ConfigError(raw.path, section.line, "", "attack section needs a name: [attack.<name>]");
    atk.kind = attack_kind_from_name(r.str("kind", "pgd"));
    switch (atk.kind) {
      case AttackKind::kFgsm: atk = AttackConfig::fgsm(); break;
      case AttackKind::kPgd: atk = AttackConfig::pgd(); break;
      case AttackKind::kAFgsm: atk = AttackConfig::a_fgsm(); break;
      case AttackKind::kAPgd: atk = AttackConfig::a_pgd(); break;
    }
    atk.name = section.name.substr(7);
    atk.epsilon = static_cast<float>(r.real("epsilon", atk.epsilon));
    atk.alpha = static_cast<float>(r.real("alpha", atk.alpha));
    atk.iterations = r.integer("iterations", atk.iterations);
    atk.targeted = r.boolean("targeted", atk.targeted);
    atk.target_offset = r.integer("target_offset", atk.target_offset);
    atk.n_tta = r.integer("n_tta", atk.n_tta);
    const std::string projection = r.str("projection", "clamp");
    if (projection == "clamp")
      atk.projection = ProjectionMode::kClamp;
    else if (projection == "radial")
      atk.projection = ProjectionMode::kRadial;
    else
      throw ConfigError(raw.path, r.line_of("projection"), "projection",
                        "expected clamp|radial, got '" + projection + "'");
    atk.random_start = r.boolean("random_start", atk.random_start);
    atk.fresh_ttas_per_iter = r.boolean("fresh_ttas", atk.fresh_ttas_per_iter);
    atk.tta = cfg.tta;  // adaptive attacks sample the defender's distribution
    atk.tta.n = atk.n_tta;
    cfg.attacks.push_back(std::move(atk));
  }

  {
    SectionReader r(raw, raw.find("eval"));
    cfg.eval.defenses = r.list("defenses", cfg.eval.defenses);
    cfg.eval.katana_mode = r.str("katana_mode", cfg.eval.katana_mode);
    cfg.eval.feature_kind = feature_kind_from_name(r.str("feature_kind", "logits"));
    cfg.eval.feature_ordering =
        feature_ordering_from_name(r.str("feature_ordering", "generation"));
    const std::string head = r.str("head", "forest");
    if (head == "forest")
      cfg.eval.head.kind = KatanaHeadConfig::Kind::kForest;
    else if (head == "logreg")
      cfg.eval.head.kind = KatanaHeadConfig::Kind::kLogreg;
    else
      throw ConfigError(raw.path, r.line_of("head"), "head",
                        "expected forest|logreg, got '" + head + "'");
    cfg.eval.head.forest.trees = r.integer("trees", cfg.eval.head.forest.trees);
    cfg.eval.head.forest.max_depth = r.integer("max_depth", cfg.eval.head.forest.max_depth);
    cfg.eval.head.forest.min_samples_leaf =
        r.integer("min_samples_leaf", cfg.eval.head.forest.min_samples_leaf);
    cfg.eval.head.forest.bootstrap = r.boolean("bootstrap", cfg.eval.head.forest.bootstrap);
    cfg.eval.head.forest.seed = r.seed("forest_seed", cfg.eval.head.forest.seed);
    cfg.eval.head.logreg.l2 = static_cast<float>(r.real("logreg_l2", cfg.eval.head.logreg.l2));
    cfg.eval.head.logreg.epochs = r.integer("logreg_epochs", cfg.eval.head.logreg.epochs);
    cfg.eval.head.logreg.lr = static_cast<float>(r.real("logreg_lr", cfg.eval.head.logreg.lr));
    cfg.eval.ensemble_size = r.integer("ensemble_size", cfg.eval.ensemble_size);
    cfg.eval.seed = r.seed("seed", cfg.eval.seed);
    cfg.eval.repeats = r.integer("repeats", cfg.eval.repeats);
    cfg.eval.n_values = r.int_list("n_values", cfg.eval.n_values);
    cfg.eval.sigma_values = r.float_list("sigma_values", cfg.eval.sigma_values);
  }

  cfg.validate();
  return cfg;
}

ExperimentConfig parse_experiment_config(const std::string& path) {
  return experiment_config_from_raw(parse_raw_config(path));
}

void ExperimentConfig::validate() const {
  model.validate();
  train.validate();
  tta.validate();
  for (const auto& atk : attacks) atk.validate();
  if (dataset.kind == DatasetKind::kSynthetic &&
      (dataset.classes < 2 || dataset.train_count < 1 || dataset.test_count < 2))
    throw std::invalid_argument("config: synthetic dataset needs classes >= 2 and nonempty splits");
  if (dataset.kind == DatasetKind::kCifar10 && dataset.dir.empty())
    throw std::invalid_argument("config: cifar10 dataset needs 'dir'");
  if (dataset.kind == DatasetKind::kRaw && dataset.path.empty())
    throw std::invalid_argument("config: raw dataset needs 'path'");
  if (dataset.test_val_count < 1 || dataset.test_val_count >= dataset.test_count)
    throw std::invalid_argument("config: test_val must be in [1, test)");
  if (eval.katana_mode != "per-attack" && eval.katana_mode != "global" &&
      eval.katana_mode != "loocv")
    throw std::invalid_argument("config: katana_mode must be per-attack|global|loocv");
  for (const auto& defense : eval.defenses)
    if (defense != "plain" && defense != "ensemble" && defense != "tta" && defense != "katana" &&
        defense != "katana-logreg")
      throw std::invalid_argument("config: unknown defense '" + defense + "'");
  if (eval.ensemble_size < 1) throw std::invalid_argument("config: ensemble_size must be >= 1");
  if (eval.repeats < 1) throw std::invalid_argument("config: repeats must be >= 1");
}

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

std::string fmt_interval(const Interval& iv) { return fmt(iv.lo) + "," + fmt(iv.hi); }

}  // namespace

std::string config_echo(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "# resolved configuration\n";
  out << "[dataset]\n";
  out << "kind = "
      << (cfg.dataset.kind == DatasetKind::kSynthetic
              ? "synthetic"
              : cfg.dataset.kind == DatasetKind::kCifar10 ? "cifar10" : "raw")
      << "\n";
  if (!cfg.dataset.dir.empty()) out << "dir = " << cfg.dataset.dir << "\n";
  if (!cfg.dataset.path.empty()) out << "path = " << cfg.dataset.path << "\n";
  out << "classes = " << cfg.dataset.classes << "\n";
  out << "size = " << cfg.dataset.size << "\n";
  out << "train = " << cfg.dataset.train_count << "\n";
  out << "test = " << cfg.dataset.test_count << "\n";
  out << "seed = " << cfg.dataset.seed << "\n";
  out << "train_val_fraction = " << fmt(cfg.dataset.train_val_fraction) << "\n";
  out << "test_val = " << cfg.dataset.test_val_count << "\n";

  out << "\n[model]\nwidths = ";
  for (size_t i = 0; i < cfg.model.conv_widths.size(); ++i)
    out << (i ? "," : "") << cfg.model.conv_widths[i];
  out << "\nembed = " << cfg.model.embed_dim << "\n";
  out << "input_mean = " << fmt(cfg.model.input_mean) << "\n";
  out << "input_scale = " << fmt(cfg.model.input_scale) << "\n";
  out << "seed = " << cfg.model.seed << "\n";

  out << "\n[train]\n";
  out << "epochs = " << cfg.train.epochs << "\n";
  out << "batch = " << cfg.train.batch_size << "\n";
  out << "lr = " << fmt(cfg.train.learning_rate) << "\n";
  out << "lr_decay = " << fmt(cfg.train.lr_decay) << "\n";
  out << "patience = " << cfg.train.patience << "\n";
  out << "momentum = " << fmt(cfg.train.momentum) << "\n";
  out << "nesterov = " << (cfg.train.nesterov ? "true" : "false") << "\n";
  out << "weight_decay = " << fmt(cfg.train.weight_decay) << "\n";
  out << "seed = " << cfg.train.seed << "\n";

  out << "\n[tta]\n";
  out << "strength = " << (cfg.tta.strength == TtaStrength::kHard ? "hard" : "soft") << "\n";
  out << "rotation_deg = " << fmt_interval(cfg.tta.rotation_deg) << "\n";
  out << "max_translate_px = " << cfg.tta.max_translate_px << "\n";
  out << "scale = " << fmt_interval(cfg.tta.scale) << "\n";
  out << "flip_prob = " << fmt(cfg.tta.flip_prob) << "\n";
  out << "mirror = " << (cfg.tta.mirror_enabled ? "true" : "false") << "\n";
  out << "brightness = " << fmt_interval(cfg.tta.brightness) << "\n";
  out << "contrast = " << fmt_interval(cfg.tta.contrast) << "\n";
  out << "saturation = " << fmt_interval(cfg.tta.saturation) << "\n";
  out << "hue = " << fmt_interval(cfg.tta.hue) << "\n";
  out << "gamma = " << fmt_interval(cfg.tta.gamma) << "\n";
  out << "sigma_bmax = " << fmt(cfg.tta.sigma_bmax) << "\n";
  out << "sigma_max = " << fmt(cfg.tta.sigma_max) << "\n";
  out << "n = " << cfg.tta.n << "\n";

  for (const auto& atk : cfg.attacks) {
    out << "\n[attack." << atk.name << "]\n";
    out << "kind = " << attack_kind_name(atk.kind) << "\n";
    out << "epsilon = " << fmt(atk.epsilon) << "\n";
    out << "alpha = " << fmt(atk.alpha) << "\n";
    out << "iterations = " << atk.iterations << "\n";
    out << "targeted = " << (atk.targeted ? "true" : "false") << "\n";
    out << "target_offset = " << atk.target_offset << "\n";
    out << "n_tta = " << atk.n_tta << "\n";
    out << "projection = " << (atk.projection == ProjectionMode::kClamp ? "clamp" : "radial")
        << "\n";
    out << "random_start = " << (atk.random_start ? "true" : "false") << "\n";
    out << "fresh_ttas = " << (atk.fresh_ttas_per_iter ? "true" : "false") << "\n";
  }

  out << "\n[eval]\ndefenses = ";
  for (size_t i = 0; i < cfg.eval.defenses.size(); ++i)
    out << (i ? "," : "") << cfg.eval.defenses[i];
  out << "\nkatana_mode = " << cfg.eval.katana_mode << "\n";
  out << "feature_kind = " << feature_kind_name(cfg.eval.feature_kind) << "\n";
  out << "feature_ordering = " << feature_ordering_name(cfg.eval.feature_ordering) << "\n";
  out << "head = "
      << (cfg.eval.head.kind == KatanaHeadConfig::Kind::kForest ? "forest" : "logreg") << "\n";
  out << "trees = " << cfg.eval.head.forest.trees << "\n";
  out << "max_depth = " << cfg.eval.head.forest.max_depth << "\n";
  out << "min_samples_leaf = " << cfg.eval.head.forest.min_samples_leaf << "\n";
  out << "bootstrap = " << (cfg.eval.head.forest.bootstrap ? "true" : "false") << "\n";
  out << "forest_seed = " << cfg.eval.head.forest.seed << "\n";
  out << "logreg_l2 = " << fmt(cfg.eval.head.logreg.l2) << "\n";
  out << "logreg_epochs = " << cfg.eval.head.logreg.epochs << "\n";
  out << "logreg_lr = " << fmt(cfg.eval.head.logreg.lr) << "\n";
  out << "ensemble_size = " << cfg.eval.ensemble_size << "\n";
  out << "seed = " << cfg.eval.seed << "\n";
  out << "repeats = " << cfg.eval.repeats << "\n";
  out << "n_values = ";
  for (size_t i = 0; i < cfg.eval.n_values.size(); ++i)
    out << (i ? "," : "") << cfg.eval.n_values[i];
  out << "\nsigma_values = ";
  for (size_t i = 0; i < cfg.eval.sigma_values.size(); ++i)
    out << (i ? "," : "") << fmt(cfg.eval.sigma_values[i]);
  out << "\n";
  return out.str();
}

}  // namespace katana
