#pragma once

// Dataset provisioning: a deterministic synthetic shape dataset whose class
// identity survives the TTA transforms, a CIFAR-10 binary reader, and
// seed-controlled stratified splits.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "katana/tensor.hpp"

namespace katana {

struct Dataset {
  std::string name;
  int height = 0, width = 0, channels = 0;
  int classes = 0;
  std::vector<float> pixels;  // M x H x W x C, row-major, values in [0,1]
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  long long image_numel() const {
    return static_cast<long long>(height) * width * channels;
  }
  const float* image_ptr(int i) const { return pixels.data() + i * image_numel(); }
  Image image(int i) const;
  void validate() const;
  uint64_t content_hash() const;
};

struct SplitSpec {
  double train_val_fraction = 0.05;
  int test_val_count = 2500;
  uint64_t seed = 0;
};

struct SplitResult {
  Dataset major;                  // train (or test)
  Dataset minor;                  // train-val (or test-val)
  std::vector<int> major_indices; // positions in the input dataset
  std::vector<int> minor_indices;
};

// Colored shapes on dark backgrounds; class = shape identity, with random
// position/scale/color jitter inside every class so the TTA transforms do not
// change class semantics. Up to 6 classes: disk, ring, square, cross,
// triangle, diamond.
Dataset generate_synthetic(int classes, int per_class, int size, uint64_t seed);

// Stratified split; `minor` receives round(fraction * M) samples.
SplitResult split_train_val(const Dataset& ds, const SplitSpec& spec);
// Stratified split; `minor` receives exactly `test_val_count` samples.
SplitResult split_test_val(const Dataset& ds, const SplitSpec& spec);

// CIFAR-10 binary format: records of 1 label byte + 3072 pixel bytes
// (1024 R, then G, then B), pixel values scaled to [0,1].
Dataset load_cifar10_file(const std::string& path);
void save_cifar10_file(const Dataset& ds, const std::string& path);

struct Cifar10Data {
  Dataset train;  // data_batch_1..5.bin in order
  Dataset test;   // test_batch.bin
};
Cifar10Data load_cifar10_binary(const std::string& dir_path);

// Raw tensor file: magic, dims, u8 labels, u8 pixels (round(255 x)).
void save_raw(const Dataset& ds, const std::string& path);
Dataset load_raw(const std::string& path);

// Subset in index order; used by the evaluation harness.
Dataset take(const Dataset& ds, const std::vector<int>& indices);

}  // namespace katana
