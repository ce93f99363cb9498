#include "katana/cache.hpp"

#include <filesystem>
#include <stdexcept>

#include "katana/io.hpp"
#include "katana/parallel.hpp"
#include "katana/rng.hpp"

namespace katana {

namespace fs = std::filesystem;

uint64_t CacheKey::combined() const {
  uint64_t h = hash_combine(image_set_id, model_id);
  h = hash_combine(h, tta_hash);
  h = hash_combine(h, seed);
  return hash_combine(h, static_cast<uint64_t>(kind) + 1);
}

uint64_t image_set_id(const std::vector<Image>& images) {
  uint64_t h = 1469598103934665603ull;
  for (const Image& img : images)
    h = fnv1a64(img.data.data(), img.data.size() * sizeof(float), h);
  return h;
}

std::vector<Image> dataset_images(const Dataset& ds) {
  std::vector<Image> out;
  out.reserve(ds.size());
  for (int i = 0; i < ds.size(); ++i) out.push_back(ds.image(i));
  return out;
}

std::vector<Matrix> compute_tta_features(const TrainedModel& model,
                                         const std::vector<Image>& images, const TtaConfig& tta,
                                         uint64_t seed, FeatureKind kind) {
  std::vector<Matrix> out(images.size());
  parallel_for(static_cast<long long>(images.size()), [&](long long i) {
    const std::vector<Image> augmented =
        generate_ttas(images[i], tta, hash_combine(seed, static_cast<uint64_t>(i)));
    out[i] = model.extract_features(augmented, kind);
  });
  return out;
}

LogitsCacheStore::LogitsCacheStore(std::string dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

namespace {
constexpr char kCacheMagic[4] = {'K', 'T', 'N', 'C'};
constexpr uint32_t kCacheVersion = 1;

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xF];
    v >>= 4;
  }
  return out;
}
}  // namespace

std::string LogitsCacheStore::entry_path(const CacheKey& key) const {
  return (fs::path(dir_) / (hex64(key.combined()) + ".ktnc")).string();
}

bool LogitsCacheStore::contains(const CacheKey& key) const {
  return fs::exists(entry_path(key));
}

void LogitsCacheStore::store(const CacheKey& key, const std::vector<Matrix>& matrices) const {
  const std::string path = entry_path(key);
  const std::string tmp = path + ".tmp";
  {
    auto out = io::open_out(tmp);
    io::write_bytes(out, kCacheMagic, 4);
    io::write_u32(out, kCacheVersion);
    io::write_u64(out, key.image_set_id);
    io::write_u64(out, key.model_id);
    io::write_u64(out, key.tta_hash);
    io::write_u64(out, key.seed);
    io::write_u32(out, static_cast<uint32_t>(key.kind));
    io::write_u32(out, static_cast<uint32_t>(matrices.size()));
    io::write_u32(out, matrices.empty() ? 0 : static_cast<uint32_t>(matrices[0].rows));
    io::write_u32(out, matrices.empty() ? 0 : static_cast<uint32_t>(matrices[0].cols));
    for (const Matrix& m : matrices) io::write_f32_vec(out, m.data);
  }
  fs::rename(tmp, path);
}

std::vector<Matrix> LogitsCacheStore::load(const CacheKey& key, size_t expected_images) const {
  auto in = io::open_in(entry_path(key));
  io::expect_magic(in, kCacheMagic, "logits cache file");
  io::expect_version(in, kCacheVersion, "logits cache file");
  const uint64_t set_id = io::read_u64(in, "cache key");
  const uint64_t model_id = io::read_u64(in, "cache key");
  const uint64_t tta_hash = io::read_u64(in, "cache key");
  const uint64_t seed = io::read_u64(in, "cache key");
  const auto kind = static_cast<FeatureKind>(io::read_u32(in, "cache key"));
  if (set_id != key.image_set_id || model_id != key.model_id || tta_hash != key.tta_hash ||
      seed != key.seed || kind != key.kind)
    throw std::runtime_error("logits cache: key mismatch in '" + entry_path(key) + "'");
  const uint32_t count = io::read_u32(in, "cache header");
  if (count != expected_images)
    throw std::runtime_error("logits cache: entry holds " + std::to_string(count) +
                             " images, expected " + std::to_string(expected_images));
  const uint32_t rows = io::read_u32(in, "cache header");
  const uint32_t cols = io::read_u32(in, "cache header");
  std::vector<Matrix> out(count, Matrix(static_cast<int>(rows), static_cast<int>(cols)));
  for (auto& m : out)
    io::read_f32_vec(in, m.data, static_cast<size_t>(rows) * cols, "cache matrix");
  return out;
}

std::vector<Matrix> LogitsCacheStore::get_or_compute(const CacheKey& key,
                                                     const TrainedModel& model,
                                                     const std::vector<Image>& images,
                                                     const TtaConfig& tta) {
  if (contains(key)) {
    ++hits_;
    return load(key, images.size());
  }
  ++misses_;
  std::vector<Matrix> matrices = compute_tta_features(model, images, tta, key.seed, key.kind);
  store(key, matrices);
  return matrices;
}

}  // namespace katana
