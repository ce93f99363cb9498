#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "katana/harness.hpp"

using namespace katana;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"(
# tiny end-to-end configuration for tests
[dataset]
kind = synthetic
classes = 3
size = 16
train = 90
test = 30
test_val = 12
seed = 42

[model]
widths = 4,6
embed = 8
seed = 1

[train]
epochs = 2
batch = 30
lr = 0.05
seed = 2

[tta]
strength = hard
n = 4
sigma_max = 0.005

[attack.fgsm]
kind = fgsm
epsilon = 0.031

[attack.pgd]
kind = pgd
epsilon = 0.031
alpha = 0.01
iterations = 3

[eval]
defenses = plain,tta,katana
trees = 20
seed = 7
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() / ("katana_harness_" + std::to_string(::getpid()) + "_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ExperimentConfig tiny_config() {
  return experiment_config_from_raw(parse_raw_config_text(kTinyConfig, "<tiny>"));
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_CASE("config parsing reads sections, attacks, and defaults") {
  const ExperimentConfig cfg = tiny_config();
  CHECK(cfg.dataset.classes == 3);
  CHECK(cfg.dataset.train_count == 90);
  CHECK(cfg.model.classes == 3);
  CHECK(cfg.model.conv_widths == std::vector<int>{4, 6});
  CHECK(cfg.train.epochs == 2);
  CHECK(cfg.tta.n == 4);
  CHECK(cfg.tta.brightness.lo == 0.6f);  // hard preset
  REQUIRE(cfg.attacks.size() == 2);
  CHECK(cfg.attacks[0].label() == "fgsm");
  CHECK(cfg.attacks[1].label() == "pgd");
  CHECK(cfg.attacks[1].iterations == 3);
  CHECK(cfg.attacks[1].alpha == 0.01f);
  CHECK(cfg.eval.head.forest.trees == 20);
  // paper defaults survive where not overridden
  CHECK(cfg.train.momentum == 0.9f);
  CHECK(cfg.train.weight_decay == 1e-4f);
}

TEST_CASE("config errors carry file, line, and field") {
  const char* bad = "[dataset]\nclasses = banana\n";
  try {
    experiment_config_from_raw(parse_raw_config_text(bad, "bad.cfg"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line == 2);
    CHECK(e.field == "classes");
    CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
  }

  CHECK_THROWS_AS(parse_raw_config_text("key_without_section = 1\n", "x.cfg"), ConfigError);
  CHECK_THROWS_AS(parse_raw_config_text("[a]\nk = 1\nk = 2\n", "x.cfg"), ConfigError);
  CHECK_THROWS_AS(parse_raw_config_text("[unterminated\n", "x.cfg"), ConfigError);
}

TEST_CASE("config echo is parseable and stable") {
  const ExperimentConfig cfg = tiny_config();
  const std::string echo = config_echo(cfg);
  const ExperimentConfig round =
      experiment_config_from_raw(parse_raw_config_text(echo, "<echo>"));
  CHECK(config_echo(round) == echo);
  CHECK(round.attacks.size() == cfg.attacks.size());
  CHECK(round.tta.content_hash() == cfg.tta.content_hash());
}

TEST_CASE("provisioned splits have the configured sizes and are disjoint") {
  const ExperimentConfig cfg = tiny_config();
  const ProvisionedData data = provision_dataset(cfg.dataset);
  CHECK(data.train.size() + data.train_val.size() == 90);
  CHECK(data.train_val.size() == 5);  // round(0.05 * 90)
  CHECK(data.test.size() == 18);
  CHECK(data.test_val.size() == 12);
  for (int i : data.test_val_indices)
    for (int j : data.test_indices) CHECK(i != j);
}

TEST_CASE("logits cache is idempotent and coherent") {
  TempDir tmp("cache");
  const ExperimentConfig cfg = tiny_config();
  Harness h(cfg, tmp.path.string());

  const auto cold = h.features(SplitTag::kTest, "", FeatureKind::kLogits);
  REQUIRE(static_cast<int>(cold.size()) == h.data().test.size());
  CHECK(cold[0].rows == 4);
  CHECK(cold[0].cols == 3);

  const auto warm = h.features(SplitTag::kTest, "", FeatureKind::kLogits);
  for (size_t i = 0; i < cold.size(); ++i) CHECK(cold[i].data == warm[i].data);

  // evicting and recomputing reproduces identical bytes
  Harness h2(cfg, tmp.path.string());
  fs::path cache_dir = tmp.path / "cache";
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(cache_dir)) entries.push_back(e.path());
  REQUIRE_FALSE(entries.empty());
  std::string before = read_file(entries.front());
  fs::remove(entries.front());
  const auto recomputed = h2.features(SplitTag::kTest, "", FeatureKind::kLogits);
  for (size_t i = 0; i < cold.size(); ++i) CHECK(cold[i].data == recomputed[i].data);
  CHECK(read_file(entries.front()) == before);
}

TEST_CASE("probs features are softmax of the cached logits blocks") {
  TempDir tmp("probs");
  Harness h(tiny_config(), tmp.path.string());
  const auto logits = h.features(SplitTag::kTest, "", FeatureKind::kLogits);
  const auto probs = h.features(SplitTag::kTest, "", FeatureKind::kProbs);
  for (size_t k = 0; k < logits.size(); ++k)
    for (int r = 0; r < logits[k].rows; ++r) {
      std::vector<float> expect(logits[k].cols);
      softmax_row(logits[k].row(r), logits[k].cols, expect.data());
      for (int c = 0; c < logits[k].cols; ++c)
        CHECK(probs[k].at(r, c) == doctest::Approx(expect[c]).epsilon(1e-6));
    }
}

TEST_CASE("evaluate produces the expected rows and deterministic CSV bytes") {
  TempDir tmp_a("eval_a");
  TempDir tmp_b("eval_b");
  Harness a(tiny_config(), tmp_a.path.string());
  const ResultsTable table_a = a.evaluate();
  a.write_results(table_a);
  a.write_manifest(&table_a);

  Harness b(tiny_config(), tmp_b.path.string());
  const ResultsTable table_b = b.evaluate();
  b.write_results(table_b);

  CHECK(table_a.to_csv() == table_b.to_csv());
  CHECK(read_file(tmp_a.path / "results.csv") == read_file(tmp_b.path / "results.csv"));

  // 3 defenses x 2 attacks
  REQUIRE(table_a.rows.size() == 6);
  CHECK(table_a.rows[0].defense == "plain");
  CHECK(table_a.rows[0].attack == "fgsm");
  CHECK(table_a.rows[5].defense == "katana");
  CHECK(table_a.rows[5].attack == "pgd");
  for (const auto& row : table_a.rows) {
    CHECK(row.clean_accuracy >= 0.0);
    CHECK(row.clean_accuracy <= 100.0);
    CHECK(row.has_adv);
  }
  CHECK(fs::exists(tmp_a.path / "manifest.json"));
  CHECK(fs::exists(tmp_a.path / "resolved_config.cfg"));
  CHECK(fs::exists(tmp_a.path / "model.bin"));
}

TEST_CASE("plain defense with no attacks equals model test accuracy") {
  TempDir tmp("noattack");
  ExperimentConfig cfg = tiny_config();
  cfg.attacks.clear();
  cfg.eval.defenses = {"plain"};
  Harness h(cfg, tmp.path.string());
  const ResultsTable table = h.evaluate();
  REQUIRE(table.rows.size() == 1);
  CHECK(table.rows[0].attack == "none");
  CHECK_FALSE(table.rows[0].has_adv);
  const double direct = 100.0 * accuracy(h.model(), h.data().test);
  CHECK(table.rows[0].clean_accuracy == doctest::Approx(direct));
}

TEST_CASE("warm-cache evaluation equals cold-cache evaluation row for row") {
  TempDir tmp("warm");
  Harness cold(tiny_config(), tmp.path.string());
  const std::string first = cold.evaluate().to_csv();
  // same directory: the second harness reuses every cache entry
  Harness warm(tiny_config(), tmp.path.string());
  const std::string second = warm.evaluate().to_csv();
  CHECK(first == second);
}

TEST_CASE("transfer modes: per-attack, global, and loocv fit the right attack sets") {
  TempDir tmp("transfer");
  Harness h(tiny_config(), tmp.path.string());

  const auto per_attack = h.fit_katana_heads("per-attack");
  REQUIRE(per_attack.size() == 2);
  CHECK(per_attack.at("fgsm").attack_tags == std::vector<std::string>{"fgsm"});
  CHECK(per_attack.at("pgd").attack_tags == std::vector<std::string>{"pgd"});

  const auto global = h.fit_katana_heads("global");
  REQUIRE(global.size() == 1);
  CHECK(global.at("global").attack_tags == std::vector<std::string>{"fgsm", "pgd"});

  const auto loocv = h.fit_katana_heads("loocv");
  REQUIRE(loocv.size() == 2);
  CHECK(loocv.at("fgsm").attack_tags == std::vector<std::string>{"pgd"});
  CHECK(loocv.at("pgd").attack_tags == std::vector<std::string>{"fgsm"});

  const ResultsTable table = h.transfer_eval("loocv");
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0].defense == "katana-loocv");
}

TEST_CASE("loocv refuses a single attack family") {
  TempDir tmp("loocv1");
  ExperimentConfig cfg = tiny_config();
  cfg.attacks.erase(cfg.attacks.begin());  // pgd only
  Harness h(cfg, tmp.path.string());
  CHECK_THROWS_WITH_AS(h.fit_katana_heads("loocv"), doctest::Contains("different kind"),
                       std::invalid_argument);
}

TEST_CASE("ablate-n emits one aggregated row per (attack, defense, n)") {
  TempDir tmp("ablateN");
  ExperimentConfig cfg = tiny_config();
  cfg.attacks.erase(cfg.attacks.begin());  // keep pgd only, keep it quick
  cfg.eval.n_values = {1, 2, 4};
  cfg.eval.repeats = 2;
  Harness h(cfg, tmp.path.string());
  const std::string csv = h.ablate_n_csv();
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "attack,defense,n,clean_mean,clean_std,adv_mean,adv_std");
  int rows = 0;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 6);  // 1 attack x 2 defenses x 3 n-values
  CHECK(csv.find("pgd,tta,1,") != std::string::npos);
  CHECK(csv.find("pgd,katana,4,") != std::string::npos);
}

TEST_CASE("ablate-katana emits the full 18-cell grid") {
  TempDir tmp("ablateK");
  ExperimentConfig cfg = tiny_config();
  cfg.attacks.erase(cfg.attacks.begin());  // pgd only
  cfg.eval.head.forest.trees = 10;
  Harness h(cfg, tmp.path.string());
  const std::string csv = h.ablate_katana_csv();
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "features,transforms,sigma_max,clean_accuracy,adversarial_accuracy");
  int rows = 0;
  while (std::getline(lines, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 18);  // {logits,probs,embeddings} x {soft,hard} x {0,0.005,0.0125}
  CHECK(csv.find("logits,hard,0.005,") != std::string::npos);
  CHECK(csv.find("embeddings,soft,0.0125,") != std::string::npos);
}

TEST_CASE("run_cli: eval writes results and is seed-reproducible; errors are structured") {
  TempDir tmp("cli");
  const fs::path cfg_path = tmp.path / "tiny.cfg";
  {
    std::ofstream out(cfg_path);
    out << kTinyConfig;
  }
  const std::string out_a = (tmp.path / "a").string();
  const std::string out_b = (tmp.path / "b").string();
  auto run = [&](std::vector<std::string> args) {
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>("katana"));
    for (auto& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
  };
  CHECK(run({"eval", "--config", cfg_path.string(), "--out", out_a, "--seed", "7"}) == 0);
  CHECK(run({"eval", "--config", cfg_path.string(), "--out", out_b, "--seed", "7"}) == 0);
  CHECK(read_file(fs::path(out_a) / "results.csv") == read_file(fs::path(out_b) / "results.csv"));
  CHECK(run({"eval", "--config", (tmp.path / "missing.cfg").string()}) != 0);
  CHECK(run({"--bogus-flag"}) != 0);
}

TEST_CASE("run_cli: tta dump writes image files") {
  TempDir tmp("clitta");
  const fs::path cfg_path = tmp.path / "tiny.cfg";
  {
    std::ofstream out(cfg_path);
    out << kTinyConfig;
  }
  const std::string out_dir = (tmp.path / "dump").string();
  std::vector<std::string> args{"tta",     "--config", cfg_path.string(), "--out",
                                out_dir,   "--index",  "1",               "--count", "3"};
  std::vector<char*> argv;
  argv.push_back(const_cast<char*>("katana"));
  for (auto& a : args) argv.push_back(a.data());
  CHECK(run_cli(static_cast<int>(argv.size()), argv.data()) == 0);
  CHECK(fs::exists(fs::path(out_dir) / "original.ppm"));
  CHECK(fs::exists(fs::path(out_dir) / "aug_000.ppm"));
  CHECK(fs::exists(fs::path(out_dir) / "aug_002.ppm"));
  const std::string ppm = read_file(fs::path(out_dir) / "aug_000.ppm");
  CHECK(ppm.substr(0, 2) == "P6");
}
