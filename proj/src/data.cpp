#include "katana/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <stdexcept>

#include "katana/io.hpp"
#include "katana/rng.hpp"

namespace katana {

Image Dataset::image(int i) const {
  if (i < 0 || i >= size())
    throw std::out_of_range("dataset: image index " + std::to_string(i) + " of " +
                            std::to_string(size()));
  Image img({height, width, channels});
  const float* src = image_ptr(i);
  std::copy(src, src + image_numel(), img.data.begin());
  return img;
}

void Dataset::validate() const {
  if (classes < 2) throw std::invalid_argument("dataset: needs >= 2 classes");
  if (pixels.size() != static_cast<size_t>(size()) * image_numel())
    throw std::invalid_argument("dataset: pixel buffer size mismatch");
  for (int label : labels)
    if (label < 0 || label >= classes)
      throw std::invalid_argument("dataset: label " + std::to_string(label) +
                                  " outside [0," + std::to_string(classes) + ")");
  for (float v : pixels)
    if (!(v >= 0.0f && v <= 1.0f))
      throw std::invalid_argument("dataset: pixel value outside [0,1]");
}

uint64_t Dataset::content_hash() const {
  uint64_t h = fnv1a64(pixels.data(), pixels.size() * sizeof(float));
  h = fnv1a64(labels.data(), labels.size() * sizeof(int), h);
  const int dims[4] = {height, width, channels, classes};
  return fnv1a64(dims, sizeof(dims), h);
}

namespace {

struct Vec2 {
  float x, y;
};

float sd_disk(Vec2 p, Vec2 c, float r) {
  return std::hypot(p.x - c.x, p.y - c.y) - r;
}

float sd_ring(Vec2 p, Vec2 c, float r) {
  return std::abs(std::hypot(p.x - c.x, p.y - c.y) - 0.78f * r) - 0.24f * r;
}

float sd_square(Vec2 p, Vec2 c, float r) {
  return std::max(std::abs(p.x - c.x), std::abs(p.y - c.y)) - 0.82f * r;
}

float sd_cross(Vec2 p, Vec2 c, float r) {
  const float ax = std::abs(p.x - c.x), ay = std::abs(p.y - c.y);
  const float bar_h = std::max(ax - r, ay - 0.32f * r);
  const float bar_v = std::max(ay - r, ax - 0.32f * r);
  return std::min(bar_h, bar_v);
}

float sd_triangle(Vec2 p, Vec2 c, float r) {
  // upward triangle as the intersection of three half planes
  const float x = p.x - c.x, y = p.y - c.y;
  const float d1 = y - r;                                // below the base
  const float d2 = 0.866f * x - 0.5f * y - 0.5f * r;     // right edge
  const float d3 = -0.866f * x - 0.5f * y - 0.5f * r;    // left edge
  return std::max(d1, std::max(d2, d3));
}

float sd_diamond(Vec2 p, Vec2 c, float r) {
  return (std::abs(p.x - c.x) + std::abs(p.y - c.y) - 1.2f * r) * 0.7071f;
}

float shape_distance(int shape, Vec2 p, Vec2 c, float r) {
  switch (shape) {
    case 0: return sd_disk(p, c, r);
    case 1: return sd_ring(p, c, r);
    case 2: return sd_square(p, c, r);
    case 3: return sd_cross(p, c, r);
    case 4: return sd_triangle(p, c, r);
    default: return sd_diamond(p, c, r);
  }
}

void hsv_color(float h, float s, float v, float rgb[3]) {
  const float hh = (h - std::floor(h)) * 6.0f;
  const int i = std::min(5, static_cast<int>(hh));
  const float f = hh - static_cast<float>(i);
  const float p = v * (1.0f - s), q = v * (1.0f - s * f), t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: rgb[0] = v; rgb[1] = t; rgb[2] = p; break;
    case 1: rgb[0] = q; rgb[1] = v; rgb[2] = p; break;
    case 2: rgb[0] = p; rgb[1] = v; rgb[2] = t; break;
    case 3: rgb[0] = p; rgb[1] = q; rgb[2] = v; break;
    case 4: rgb[0] = t; rgb[1] = p; rgb[2] = v; break;
    default: rgb[0] = v; rgb[1] = p; rgb[2] = q; break;
  }
}

constexpr int kMaxShapeClasses = 6;

void render_shape_image(int shape, int size, Rng& rng, float* out) {
  const float s = static_cast<float>(size);
  const Vec2 center{s * rng.uniform_float(0.38f, 0.62f), s * rng.uniform_float(0.38f, 0.62f)};
  const float radius = s * rng.uniform_float(0.22f, 0.32f);
  // Low-contrast pastel shape over a mid-gray speckled background. The hue
  // spans the full circle (color never identifies the class); the within-class
  // jitter (position, scale, rotation, color, texture) roughly covers the TTA
  // transform ranges, and the modest contrast keeps input-space margins small
  // enough for bounded perturbations to matter.
  const float phi = rng.uniform_float(-0.35f, 0.35f);  // shape rotation, rad
  const float cos_phi = std::cos(phi), sin_phi = std::sin(phi);
  float pastel[3];
  hsv_color(rng.uniform_float(0.0f, 1.0f), rng.uniform_float(0.35f, 0.65f), 1.0f, pastel);
  const float contrast = rng.uniform_float(0.18f, 0.32f);
  const float bg_base = rng.uniform_float(0.25f, 0.45f);
  float bg[3], fg[3];
  for (int k = 0; k < 3; ++k) {
    bg[k] = bg_base + rng.uniform_float(-0.04f, 0.04f);
    fg[k] = bg[k] + contrast * (0.45f + 0.55f * pastel[k]);
  }

  const float aa = 1.1f;  // edge softness in pixels
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float rx = static_cast<float>(x) + 0.5f - center.x;
      const float ry = static_cast<float>(y) + 0.5f - center.y;
      const Vec2 p{center.x + cos_phi * rx + sin_phi * ry,
                   center.y - sin_phi * rx + cos_phi * ry};
      const float d = shape_distance(shape, p, center, radius);
      float alpha = 0.5f - d / aa;
      alpha = alpha < 0.0f ? 0.0f : (alpha > 1.0f ? 1.0f : alpha);
      const float speckle = rng.uniform_float(-0.05f, 0.05f);
      float* px = out + (static_cast<long long>(y) * size + x) * 3;
      for (int k = 0; k < 3; ++k) {
        float v = bg[k] + alpha * (fg[k] - bg[k]) + speckle;
        px[k] = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
      }
    }
}

}  // namespace

Dataset generate_synthetic(int classes, int per_class, int size, uint64_t seed) {
  if (classes < 2 || classes > kMaxShapeClasses)
    throw std::invalid_argument("generate_synthetic: classes must be in [2," +
                                std::to_string(kMaxShapeClasses) + "], got " +
                                std::to_string(classes));
  if (per_class < 1) throw std::invalid_argument("generate_synthetic: per_class must be >= 1");
  if (size < 16) throw std::invalid_argument("generate_synthetic: size must be >= 16");

  Dataset ds;
  ds.name = "synthetic-shapes";
  ds.height = ds.width = size;
  ds.channels = 3;
  ds.classes = classes;
  ds.labels.resize(static_cast<size_t>(classes) * per_class);
  ds.pixels.resize(ds.labels.size() * ds.image_numel());
  for (int c = 0; c < classes; ++c)
    for (int k = 0; k < per_class; ++k) {
      const int idx = c * per_class + k;
      ds.labels[idx] = c;
      Rng rng = Rng::stream(seed, (static_cast<uint64_t>(c) << 32) | static_cast<uint64_t>(k));
      render_shape_image(c, size, rng, ds.pixels.data() + idx * ds.image_numel());
    }
  return ds;
}

namespace {

// Allocation per class for a stratified split of `total` samples: floor of the
// proportional share, remainder by largest fractional part (ties to the lower
// class index).
std::vector<int> stratified_allocation(const std::vector<int>& class_sizes, int total) {
  const int m = std::accumulate(class_sizes.begin(), class_sizes.end(), 0);
  std::vector<int> alloc(class_sizes.size());
  std::vector<std::pair<double, int>> fraction;
  int assigned = 0;
  for (size_t c = 0; c < class_sizes.size(); ++c) {
    const double share = static_cast<double>(total) * class_sizes[c] / m;
    alloc[c] = static_cast<int>(share);
    assigned += alloc[c];
    fraction.emplace_back(share - alloc[c], static_cast<int>(c));
  }
  std::sort(fraction.begin(), fraction.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < total - assigned; ++i) alloc[fraction[i].second]++;
  for (size_t c = 0; c < class_sizes.size(); ++c)
    if (alloc[c] > class_sizes[c])
      throw std::invalid_argument("split: class " + std::to_string(c) + " has " +
                                  std::to_string(class_sizes[c]) + " samples, needs " +
                                  std::to_string(alloc[c]));
  return alloc;
}

SplitResult stratified_split(const Dataset& ds, int minor_total, uint64_t seed) {
  if (minor_total <= 0 || minor_total >= ds.size())
    throw std::invalid_argument("split: minor part size " + std::to_string(minor_total) +
                                " must be in (0," + std::to_string(ds.size()) + ")");
  std::vector<std::vector<int>> by_class(ds.classes);
  for (int i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);
  std::vector<int> class_sizes(ds.classes);
  for (int c = 0; c < ds.classes; ++c) class_sizes[c] = static_cast<int>(by_class[c].size());
  const std::vector<int> alloc = stratified_allocation(class_sizes, minor_total);

  SplitResult result;
  for (int c = 0; c < ds.classes; ++c) {
    Rng rng = Rng::stream(seed, static_cast<uint64_t>(c));
    rng.shuffle(by_class[c].begin(), by_class[c].end());
    for (size_t k = 0; k < by_class[c].size(); ++k)
      (static_cast<int>(k) < alloc[c] ? result.minor_indices : result.major_indices)
          .push_back(by_class[c][k]);
  }
  std::sort(result.major_indices.begin(), result.major_indices.end());
  std::sort(result.minor_indices.begin(), result.minor_indices.end());
  result.major = take(ds, result.major_indices);
  result.minor = take(ds, result.minor_indices);
  return result;
}

}  // namespace

SplitResult split_train_val(const Dataset& ds, const SplitSpec& spec) {
  if (!(spec.train_val_fraction > 0.0 && spec.train_val_fraction < 1.0))
    throw std::invalid_argument("split: train_val_fraction must be in (0,1)");
  const int minor = std::max(1, static_cast<int>(std::lround(spec.train_val_fraction * ds.size())));
  return stratified_split(ds, minor, hash_combine(spec.seed, 0xA11Du));
}

SplitResult split_test_val(const Dataset& ds, const SplitSpec& spec) {
  if (spec.test_val_count >= ds.size())
    throw std::invalid_argument("split: test_val_count " + std::to_string(spec.test_val_count) +
                                " must be smaller than the test set size " +
                                std::to_string(ds.size()));
  return stratified_split(ds, spec.test_val_count, hash_combine(spec.seed, 0xB22Eu));
}

Dataset take(const Dataset& ds, const std::vector<int>& indices) {
  Dataset out;
  out.name = ds.name;
  out.height = ds.height;
  out.width = ds.width;
  out.channels = ds.channels;
  out.classes = ds.classes;
  out.labels.reserve(indices.size());
  out.pixels.reserve(indices.size() * ds.image_numel());
  for (int i : indices) {
    if (i < 0 || i >= ds.size())
      throw std::out_of_range("take: index " + std::to_string(i) + " out of range");
    out.labels.push_back(ds.labels[i]);
    const float* src = ds.image_ptr(i);
    out.pixels.insert(out.pixels.end(), src, src + ds.image_numel());
  }
  return out;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary format
// ---------------------------------------------------------------------------

namespace {
constexpr int kCifarRecord = 3073;
constexpr int kCifarDim = 32;
constexpr int kCifarPlane = 1024;
}  // namespace

Dataset load_cifar10_file(const std::string& path) {
  auto in = io::open_in(path);
  in.seekg(0, std::ios::end);
  const long long file_size = static_cast<long long>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (file_size % kCifarRecord != 0)
    throw std::runtime_error("cifar10: '" + path + "' has size " + std::to_string(file_size) +
                             ", not a multiple of 3073; last full record ends at byte " +
                             std::to_string((file_size / kCifarRecord) * kCifarRecord));
  const int records = static_cast<int>(file_size / kCifarRecord);
  if (records == 0) throw std::runtime_error("cifar10: '" + path + "' holds no records");

  Dataset ds;
  ds.name = std::filesystem::path(path).filename().string();
  ds.height = ds.width = kCifarDim;
  ds.channels = 3;
  ds.classes = 10;
  ds.labels.resize(records);
  ds.pixels.resize(static_cast<size_t>(records) * ds.image_numel());
  std::vector<unsigned char> record(kCifarRecord);
  for (int r = 0; r < records; ++r) {
    io::read_bytes(in, record.data(), kCifarRecord, "cifar10 record");
    if (record[0] > 9)
      throw std::runtime_error("cifar10: '" + path + "' record " + std::to_string(r) +
                               " has label byte " + std::to_string(record[0]) +
                               " at byte offset " + std::to_string(r * kCifarRecord));
    ds.labels[r] = record[0];
    float* img = ds.pixels.data() + static_cast<size_t>(r) * ds.image_numel();
    for (int p = 0; p < kCifarPlane; ++p)
      for (int c = 0; c < 3; ++c)
        img[p * 3 + c] = static_cast<float>(record[1 + c * kCifarPlane + p]) / 255.0f;
  }
  return ds;
}

void save_cifar10_file(const Dataset& ds, const std::string& path) {
  if (ds.height != kCifarDim || ds.width != kCifarDim || ds.channels != 3)
    throw std::invalid_argument("cifar10: only 32x32x3 datasets can be written");
  auto out = io::open_out(path);
  std::vector<unsigned char> record(kCifarRecord);
  for (int r = 0; r < ds.size(); ++r) {
    record[0] = static_cast<unsigned char>(ds.labels[r]);
    const float* img = ds.image_ptr(r);
    for (int p = 0; p < kCifarPlane; ++p)
      for (int c = 0; c < 3; ++c)
        record[1 + c * kCifarPlane + p] =
            static_cast<unsigned char>(std::lround(img[p * 3 + c] * 255.0f));
    io::write_bytes(out, record.data(), kCifarRecord);
  }
}

Cifar10Data load_cifar10_binary(const std::string& dir_path) {
  namespace fs = std::filesystem;
  Cifar10Data data;
  bool first = true;
  for (int b = 1; b <= 5; ++b) {
    const fs::path p = fs::path(dir_path) / ("data_batch_" + std::to_string(b) + ".bin");
    if (!fs::exists(p))
      throw std::runtime_error("cifar10: missing batch file '" + p.string() + "'");
    Dataset batch = load_cifar10_file(p.string());
    if (first) {
      data.train = std::move(batch);
      first = false;
    } else {
      data.train.labels.insert(data.train.labels.end(), batch.labels.begin(), batch.labels.end());
      data.train.pixels.insert(data.train.pixels.end(), batch.pixels.begin(), batch.pixels.end());
    }
  }
  data.train.name = "cifar10-train";
  const fs::path t = fs::path(dir_path) / "test_batch.bin";
  if (!fs::exists(t)) throw std::runtime_error("cifar10: missing batch file '" + t.string() + "'");
  data.test = load_cifar10_file(t.string());
  data.test.name = "cifar10-test";
  return data;
}

// ---------------------------------------------------------------------------
// Raw tensor file
// ---------------------------------------------------------------------------

namespace {
constexpr char kRawMagic[4] = {'K', 'T', 'N', 'I'};
constexpr uint32_t kRawVersion = 1;
}  // namespace

void save_raw(const Dataset& ds, const std::string& path) {
  auto out = io::open_out(path);
  io::write_bytes(out, kRawMagic, 4);
  io::write_u32(out, kRawVersion);
  io::write_u32(out, static_cast<uint32_t>(ds.size()));
  io::write_u32(out, static_cast<uint32_t>(ds.height));
  io::write_u32(out, static_cast<uint32_t>(ds.width));
  io::write_u32(out, static_cast<uint32_t>(ds.channels));
  io::write_u32(out, static_cast<uint32_t>(ds.classes));
  io::write_string(out, ds.name);
  std::vector<unsigned char> bytes(ds.labels.begin(), ds.labels.end());
  io::write_bytes(out, bytes.data(), bytes.size());
  bytes.resize(ds.pixels.size());
  for (size_t i = 0; i < ds.pixels.size(); ++i)
    bytes[i] = static_cast<unsigned char>(std::lround(ds.pixels[i] * 255.0f));
  io::write_bytes(out, bytes.data(), bytes.size());
}

Dataset load_raw(const std::string& path) {
  auto in = io::open_in(path);
  io::expect_magic(in, kRawMagic, "raw dataset file");
  io::expect_version(in, kRawVersion, "raw dataset file");
  Dataset ds;
  const uint32_t m = io::read_u32(in, "raw dataset header");
  ds.height = static_cast<int>(io::read_u32(in, "raw dataset header"));
  ds.width = static_cast<int>(io::read_u32(in, "raw dataset header"));
  ds.channels = static_cast<int>(io::read_u32(in, "raw dataset header"));
  ds.classes = static_cast<int>(io::read_u32(in, "raw dataset header"));
  ds.name = io::read_string(in, "raw dataset header");
  std::vector<unsigned char> bytes(m);
  io::read_bytes(in, bytes.data(), m, "raw dataset labels");
  ds.labels.assign(bytes.begin(), bytes.end());
  bytes.resize(static_cast<size_t>(m) * ds.image_numel());
  io::read_bytes(in, bytes.data(), bytes.size(), "raw dataset pixels");
  ds.pixels.resize(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i) ds.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
  return ds;
}

}  // namespace katana
