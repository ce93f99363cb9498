#pragma once

// Randomized test-time augmentation pipeline: five color transforms in random
// order, edge-replicate padding to 2x, one combined affine warp, Gaussian
// blur, center crop, horizontal flip, and white Gaussian noise.

#include <array>
#include <cstdint>
#include <vector>

#include "katana/rng.hpp"
#include "katana/tensor.hpp"

namespace katana {

enum class TtaStrength : uint8_t { kSoft, kHard };

struct Interval {
  float lo = 0.0f;
  float hi = 0.0f;
};

struct TtaConfig {
  TtaStrength strength = TtaStrength::kHard;
  Interval rotation_deg{-15.0f, 15.0f};
  int max_translate_px = 2;
  Interval scale{0.9f, 1.1f};
  float flip_prob = 0.5f;
  bool mirror_enabled = true;
  Interval brightness{0.6f, 1.4f};
  Interval contrast{0.7f, 1.3f};
  Interval saturation{0.5f, 1.5f};
  Interval hue{-0.06f, 0.06f};
  Interval gamma{0.7f, 1.3f};
  float sigma_bmax = 0.5f;    // blur sigma ~ U(0.001, sigma_bmax)
  float sigma_max = 0.005f;   // noise sigma ~ U(0, sigma_max)
  int pad_target = 0;         // 0 -> twice the input size
  int n = 256;

  static TtaConfig hard();
  static TtaConfig soft();
  // Every interval collapsed to its identity value; flips and noise off.
  static TtaConfig identity();

  void validate() const;
  uint64_t content_hash() const;
};

struct TtaParams {
  float angle_deg = 0.0f;
  int dx = 0, dy = 0;
  float scale = 1.0f;
  bool flip = false;
  float brightness = 1.0f;
  float contrast = 1.0f;
  float saturation = 1.0f;
  float hue = 0.0f;
  float gamma = 1.0f;
  float sigma_b = 0.001f;
  float sigma = 0.0f;
  std::array<uint8_t, 5> color_order{0, 1, 2, 3, 4};  // indices into {b,c,sat,h,gamma}
};

TtaParams sample_params(const TtaConfig& cfg, Rng& rng);

float rgb_to_gray(float r, float g, float b);

// Color transforms in params' sampled order, each clipped back to [0,1].
Image apply_color(const Image& img, const TtaParams& params);

// Pad to 2x with edge replication, one combined rotation+translation+scale
// warp (bilinear), center crop, then horizontal flip.
Image apply_affine(const Image& img, const TtaParams& params);

Image apply_blur(const Image& img, float sigma_b);

// x + N(0, sigma) per element, clipped to [0,1]. sigma == 0 returns x exactly.
Image apply_noise(const Image& img, float sigma, Rng& rng);

// Full pipeline: colors -> pad -> affine -> blur -> crop -> flip -> noise.
// `rng` supplies the noise draws; transform parameters come from `params`.
Image apply_tta(const Image& img, const TtaParams& params, Rng& rng);

// N independent draws; augmentation i uses substream i of `seed`, so parallel
// generation is bit-identical to sequential.
std::vector<Image> generate_ttas(const Image& img, const TtaConfig& cfg, uint64_t seed);

}  // namespace katana
