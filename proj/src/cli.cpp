#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "katana/harness.hpp"

namespace katana {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_ppm(const Image& img, const std::string& path) {
  const int h = img.shape[0], w = img.shape[1], c = img.shape[2];
  std::ofstream out(path, std::ios::binary);
  out << "P6\n" << w << " " << h << "\n255\n";
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 3; ++k) {
        const float v = img.data[(static_cast<long long>(y) * w + x) * c + (c == 3 ? k : 0)];
        out.put(static_cast<char>(std::lround(v * 255.0f)));
      }
}

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "results";
  int64_t seed_override = -1;

  ExperimentConfig load() const {
    ExperimentConfig cfg = parse_experiment_config(config_path);
    if (seed_override >= 0) cfg.eval.seed = static_cast<uint64_t>(seed_override);
    return cfg;
  }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "experiment config file")->required();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed_override, "override the evaluation seed");
}

int cmd_train(const CommonOpts& opts) {
  Harness h(opts.load(), opts.out_dir);
  const TrainedModel& m = h.model();
  json summary = {{"model_file", (fs::path(opts.out_dir) / "model.bin").string()},
                  {"epochs_run", m.meta().epochs_run},
                  {"train_val_accuracy", m.meta().final_train_val_accuracy}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_attack(const CommonOpts& opts, const std::string& attack_name,
               const std::string& model_path) {
  ExperimentConfig cfg = opts.load();
  Harness h(cfg, opts.out_dir);
  if (!model_path.empty())
    h.set_model(TrainedModel::load(model_path, cfg.model.classes));
  std::vector<std::string> names;
  for (const auto& a : cfg.attacks) names.push_back(a.label());
  if (!attack_name.empty()) names = {attack_name};
  if (names.empty()) throw std::runtime_error("attack: no attacks configured");

  json manifest;
  manifest["seed"] = cfg.eval.seed;
  manifest["config_echo_file"] = "resolved_config.cfg";
  json entries = json::array();
  for (const auto& name : names) {
    const AttackBatchResult& result = h.adversarial(name, SplitTag::kTest);
    Dataset adv = h.data().test;
    adv.name = h.data().test.name + "-adv-" + name;
    adv.pixels.clear();
    for (const Image& img : result.images)
      adv.pixels.insert(adv.pixels.end(), img.data.begin(), img.data.end());
    const std::string file = (fs::path(opts.out_dir) / ("adv_" + name + ".raw")).string();
    save_raw(adv, file);
    float mx = 0;
    for (float v : result.linf) mx = std::max(mx, v);
    entries.push_back({{"name", name},
                       {"file", file},
                       {"per_sample_linf", result.linf},
                       {"max_linf", mx}});
  }
  manifest["attacks"] = entries;
  std::ofstream out(fs::path(opts.out_dir) / "attack_manifest.json");
  out << manifest.dump(2) << "\n";
  std::cout << "wrote " << entries.size() << " adversarial set(s) under " << opts.out_dir << "\n";
  return 0;
}

int cmd_tta(const CommonOpts& opts, int index, int count) {
  ExperimentConfig cfg = opts.load();
  if (count > 0) cfg.tta.n = count;
  Harness h(cfg, opts.out_dir);
  const Dataset& test = h.data().test;
  if (index < 0 || index >= test.size())
    throw std::runtime_error("tta: image index " + std::to_string(index) + " outside [0," +
                             std::to_string(test.size()) + ")");
  const Image original = test.image(index);
  write_ppm(original, (fs::path(opts.out_dir) / "original.ppm").string());
  const auto batch = generate_ttas(original, cfg.tta, cfg.eval.seed);
  for (size_t i = 0; i < batch.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "aug_%03zu.ppm", i);
    write_ppm(batch[i], (fs::path(opts.out_dir) / name).string());
  }
  std::cout << "wrote " << batch.size() << " augmentations of test image " << index << " to "
            << opts.out_dir << "\n";
  return 0;
}

int cmd_fit_katana(const CommonOpts& opts, const std::string& model_path) {
  ExperimentConfig cfg = opts.load();
  Harness h(cfg, opts.out_dir);
  if (!model_path.empty())
    h.set_model(TrainedModel::load(model_path, cfg.model.classes));
  const auto heads = h.fit_katana_heads(cfg.eval.katana_mode);
  json files = json::array();
  for (const auto& [name, head] : heads) {
    const std::string file = (fs::path(opts.out_dir) / ("katana_" + name + ".bin")).string();
    head.save(file);
    files.push_back(file);
  }
  std::cout << json({{"mode", cfg.eval.katana_mode}, {"files", files}}).dump(2) << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts) {
  Harness h(opts.load(), opts.out_dir);
  const ResultsTable table = h.evaluate();
  h.write_results(table);
  h.write_manifest(&table);
  std::cout << table.to_csv();
  return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& kind) {
  Harness h(opts.load(), opts.out_dir);
  std::string csv;
  std::string file;
  if (kind == "n") {
    csv = h.ablate_n_csv();
    file = "ablate_n.csv";
  } else if (kind == "katana") {
    csv = h.ablate_katana_csv();
    file = "ablate_katana.csv";
  } else {
    throw std::runtime_error("ablate: unknown kind '" + kind + "' (expected n|katana)");
  }
  std::ofstream out(fs::path(opts.out_dir) / file, std::ios::binary);
  out << csv;
  std::cout << csv;
  return 0;
}

int cmd_transfer(const CommonOpts& opts, const std::string& mode) {
  Harness h(opts.load(), opts.out_dir);
  const ResultsTable table = h.transfer_eval(mode);
  std::ofstream out(fs::path(opts.out_dir) / ("transfer_" + mode + ".csv"), std::ios::binary);
  out << table.to_csv();
  h.write_manifest(&table);
  std::cout << table.to_csv();
  return 0;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"adversarial-robustness laboratory: TTA and KATANA defenses, FGSM/PGD attacks"};
  app.require_subcommand(1);

  CommonOpts train_opts, attack_opts, tta_opts, fit_opts, eval_opts, ablate_opts, transfer_opts;
  std::string attack_name, attack_model, fit_model;
  int tta_index = 0, tta_count = 0;
  std::string ablate_kind = "n", transfer_mode = "per-attack";

  add_common(app.add_subcommand("train", "train the classifier"), train_opts);
  auto* attack_cmd =
      app.add_subcommand("attack", "craft adversarial images for the test split");
  add_common(attack_cmd, attack_opts);
  attack_cmd->add_option("--attack", attack_name, "attack name (default: all configured)");
  attack_cmd->add_option("--model", attack_model, "model file (default: train from config)");
  auto* tta_cmd = app.add_subcommand("tta", "dump augmentations of one image for inspection");
  add_common(tta_cmd, tta_opts);
  tta_cmd->add_option("--index", tta_index, "test image index");
  tta_cmd->add_option("--count", tta_count, "number of augmentations (default: config n)");
  auto* fit_cmd = app.add_subcommand("fit-katana", "fit and save the defense head(s)");
  add_common(fit_cmd, fit_opts);
  fit_cmd->add_option("--model", fit_model, "model file (default: train from config)");
  add_common(app.add_subcommand("eval", "full evaluation protocol"), eval_opts);
  auto* ablate_cmd = app.add_subcommand("ablate", "parameter ablations");
  add_common(ablate_cmd, ablate_opts);
  ablate_cmd->add_option("--kind", ablate_kind, "n | katana");
  auto* transfer_cmd = app.add_subcommand("transfer", "katana fitting-scope comparison");
  add_common(transfer_cmd, transfer_opts);
  transfer_cmd->add_option("--mode", transfer_mode, "per-attack | global | loocv");

  try {
    app.parse(argc, argv);
    if (app.got_subcommand("train")) return cmd_train(train_opts);
    if (app.got_subcommand("attack")) return cmd_attack(attack_opts, attack_name, attack_model);
    if (app.got_subcommand("tta")) return cmd_tta(tta_opts, tta_index, tta_count);
    if (app.got_subcommand("fit-katana")) return cmd_fit_katana(fit_opts, fit_model);
    if (app.got_subcommand("eval")) return cmd_eval(eval_opts);
    if (app.got_subcommand("ablate")) return cmd_ablate(ablate_opts, ablate_kind);
    if (app.got_subcommand("transfer")) return cmd_transfer(transfer_opts, transfer_mode);
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << json({{"error", e.what()}, {"kind", "usage"}}).dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json({{"error", e.what()}, {"kind", "runtime"}}).dump() << "\n";
    return 1;
  }
}

}  // namespace katana
