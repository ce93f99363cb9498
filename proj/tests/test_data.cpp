#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "katana/data.hpp"
#include "katana/rng.hpp"

using namespace katana;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("katana_test_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

TEST_CASE("synthetic dataset is balanced, in range, and reproducible") {
  const Dataset a = generate_synthetic(4, 25, 32, 7);
  CHECK(a.size() == 100);
  CHECK(a.classes == 4);
  std::vector<int> counts(4, 0);
  for (int label : a.labels) counts[label]++;
  for (int c : counts) CHECK(c == 25);
  a.validate();

  const Dataset b = generate_synthetic(4, 25, 32, 7);
  CHECK(a.pixels == b.pixels);
  CHECK(a.labels == b.labels);

  const Dataset c = generate_synthetic(4, 25, 32, 8);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("synthetic dataset rejects bad arguments") {
  CHECK_THROWS_AS(generate_synthetic(1, 10, 32, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(9, 10, 32, 0), std::invalid_argument);
  CHECK_THROWS_AS(generate_synthetic(4, 10, 8, 0), std::invalid_argument);
}

TEST_CASE("splits partition the dataset") {
  const Dataset ds = generate_synthetic(4, 30, 32, 11);
  SplitSpec spec;
  spec.seed = 5;
  spec.train_val_fraction = 0.05;
  const SplitResult split = split_train_val(ds, spec);
  CHECK(split.minor.size() == 6);  // 5% of 120
  CHECK(split.major.size() == 114);

  std::set<int> all(split.major_indices.begin(), split.major_indices.end());
  for (int i : split.minor_indices) {
    CHECK(all.find(i) == all.end());
    all.insert(i);
  }
  CHECK(static_cast<int>(all.size()) == ds.size());
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == ds.size() - 1);

  // content matches indices
  for (size_t k = 0; k < split.minor_indices.size(); ++k)
    CHECK(split.minor.labels[k] == ds.labels[split.minor_indices[k]]);
}

TEST_CASE("test-val split takes an exact stratified count") {
  const Dataset ds = generate_synthetic(4, 30, 32, 12);
  SplitSpec spec;
  spec.seed = 6;
  spec.test_val_count = 20;
  const SplitResult split = split_test_val(ds, spec);
  CHECK(split.minor.size() == 20);
  CHECK(split.major.size() == 100);
  std::vector<int> counts(4, 0);
  for (int label : split.minor.labels) counts[label]++;
  for (int c : counts) CHECK(c == 5);

  SplitSpec bad = spec;
  bad.test_val_count = 120;
  CHECK_THROWS_AS(split_test_val(ds, bad), std::invalid_argument);
}

TEST_CASE("splits are deterministic per seed") {
  const Dataset ds = generate_synthetic(3, 20, 32, 13);
  SplitSpec spec;
  spec.seed = 9;
  spec.test_val_count = 12;
  const SplitResult a = split_test_val(ds, spec);
  const SplitResult b = split_test_val(ds, spec);
  CHECK(a.minor_indices == b.minor_indices);
  spec.seed = 10;
  const SplitResult c = split_test_val(ds, spec);
  CHECK(a.minor_indices != c.minor_indices);
}

TEST_CASE("cifar10 loader round-trips bytes") {
  TempDir tmp;
  const fs::path file = tmp.path / "batch.bin";

  // two handcrafted records
  std::vector<unsigned char> bytes(2 * 3073);
  Rng rng(31);
  bytes[0] = 7;
  bytes[3073] = 0;
  for (size_t i = 0; i < bytes.size(); ++i)
    if (i != 0 && i != 3073) bytes[i] = static_cast<unsigned char>(rng.uniform_int(0, 255));
  {
    std::ofstream out(file, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }

  const Dataset ds = load_cifar10_file(file.string());
  CHECK(ds.size() == 2);
  CHECK(ds.labels[0] == 7);
  CHECK(ds.labels[1] == 0);
  CHECK(ds.classes == 10);
  // first pixel byte of record 0 is the R value of pixel (0,0)
  CHECK(ds.pixels[0] == doctest::Approx(bytes[1] / 255.0f));

  const fs::path out_file = tmp.path / "roundtrip.bin";
  save_cifar10_file(ds, out_file.string());
  std::ifstream in(out_file, std::ios::binary);
  std::vector<unsigned char> again((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  CHECK(again == bytes);
}

TEST_CASE("cifar10 loader rejects truncated files with a byte offset") {
  TempDir tmp;
  const fs::path file = tmp.path / "truncated.bin";
  {
    std::ofstream out(file, std::ios::binary);
    std::vector<char> junk(3073 + 100, 3);
    out.write(junk.data(), junk.size());
  }
  CHECK_THROWS_WITH_AS(load_cifar10_file(file.string()), doctest::Contains("3073"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(load_cifar10_file((tmp.path / "missing.bin").string()),
                       doctest::Contains("missing.bin"), std::runtime_error);
}

TEST_CASE("cifar10 directory loader requires the standard batch files") {
  TempDir tmp;
  CHECK_THROWS_WITH_AS(load_cifar10_binary(tmp.path.string()), doctest::Contains("data_batch_1"),
                       std::runtime_error);
}

TEST_CASE("raw dataset file round-trips to u8 precision") {
  TempDir tmp;
  Dataset ds = generate_synthetic(3, 5, 32, 17);
  // snap to the u8 grid so the round trip is exact
  for (auto& v : ds.pixels) v = std::round(v * 255.0f) / 255.0f;
  const fs::path file = tmp.path / "ds.raw";
  save_raw(ds, file.string());
  const Dataset loaded = load_raw(file.string());
  CHECK(loaded.labels == ds.labels);
  CHECK(loaded.height == ds.height);
  CHECK(loaded.classes == ds.classes);
  REQUIRE(loaded.pixels.size() == ds.pixels.size());
  for (size_t i = 0; i < ds.pixels.size(); ++i)
    CHECK(loaded.pixels[i] == doctest::Approx(ds.pixels[i]).epsilon(1e-6));
}
