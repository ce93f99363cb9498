#include "katana/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "katana/kernels.hpp"
#include "katana/parallel.hpp"

namespace katana {

TtaConfig TtaConfig::hard() { return TtaConfig{}; }

TtaConfig TtaConfig::soft() {
  TtaConfig cfg;
  cfg.strength = TtaStrength::kSoft;
  cfg.rotation_deg = {-8.0f, 8.0f};
  cfg.scale = {0.95f, 1.05f};
  cfg.brightness = {0.8f, 1.2f};
  cfg.contrast = {0.85f, 1.15f};
  cfg.saturation = {0.75f, 1.25f};
  cfg.hue = {-0.03f, 0.03f};
  cfg.gamma = {0.85f, 1.15f};
  cfg.sigma_bmax = 0.25f;
  return cfg;
}

TtaConfig TtaConfig::identity() {
  TtaConfig cfg;
  cfg.rotation_deg = {0.0f, 0.0f};
  cfg.max_translate_px = 0;
  cfg.scale = {1.0f, 1.0f};
  cfg.flip_prob = 0.0f;
  cfg.brightness = {1.0f, 1.0f};
  cfg.contrast = {1.0f, 1.0f};
  cfg.saturation = {1.0f, 1.0f};
  cfg.hue = {0.0f, 0.0f};
  cfg.gamma = {1.0f, 1.0f};
  cfg.sigma_bmax = 0.001f;
  cfg.sigma_max = 0.0f;
  return cfg;
}

void TtaConfig::validate() const {
  auto check = [](const Interval& iv, const char* name) {
    if (!(iv.lo <= iv.hi))
      throw std::invalid_argument(std::string("tta config: interval ") + name + " has lo > hi");
  };
  check(rotation_deg, "rotation_deg");
  check(scale, "scale");
  check(brightness, "brightness");
  check(contrast, "contrast");
  check(saturation, "saturation");
  check(hue, "hue");
  check(gamma, "gamma");
  if (max_translate_px < 0) throw std::invalid_argument("tta config: max_translate_px < 0");
  if (flip_prob < 0.0f || flip_prob > 1.0f)
    throw std::invalid_argument("tta config: flip_prob must be in [0,1]");
  if (sigma_bmax < 0.001f) throw std::invalid_argument("tta config: sigma_bmax must be >= 0.001");
  if (sigma_max < 0.0f) throw std::invalid_argument("tta config: sigma_max must be >= 0");
  if (n < 1) throw std::invalid_argument("tta config: n must be >= 1");
  if (scale.lo <= 0.0f) throw std::invalid_argument("tta config: scale must be positive");
}

uint64_t TtaConfig::content_hash() const {
  std::vector<float> fields{
      static_cast<float>(strength), rotation_deg.lo, rotation_deg.hi,
      static_cast<float>(max_translate_px), scale.lo, scale.hi, flip_prob,
      static_cast<float>(mirror_enabled), brightness.lo, brightness.hi, contrast.lo, contrast.hi,
      saturation.lo, saturation.hi, hue.lo, hue.hi, gamma.lo, gamma.hi, sigma_bmax, sigma_max,
      static_cast<float>(pad_target), static_cast<float>(n)};
  return fnv1a64(fields.data(), fields.size() * sizeof(float));
}

TtaParams sample_params(const TtaConfig& cfg, Rng& rng) {
  cfg.validate();
  TtaParams p;
  p.angle_deg = rng.uniform_float(cfg.rotation_deg.lo, cfg.rotation_deg.hi);
  p.dx = cfg.max_translate_px == 0 ? 0 : rng.uniform_int(-cfg.max_translate_px, cfg.max_translate_px);
  p.dy = cfg.max_translate_px == 0 ? 0 : rng.uniform_int(-cfg.max_translate_px, cfg.max_translate_px);
  p.scale = rng.uniform_float(cfg.scale.lo, cfg.scale.hi);
  p.flip = cfg.mirror_enabled && rng.bernoulli(cfg.flip_prob);
  p.brightness = rng.uniform_float(cfg.brightness.lo, cfg.brightness.hi);
  p.contrast = rng.uniform_float(cfg.contrast.lo, cfg.contrast.hi);
  p.saturation = rng.uniform_float(cfg.saturation.lo, cfg.saturation.hi);
  p.hue = rng.uniform_float(cfg.hue.lo, cfg.hue.hi);
  p.gamma = rng.uniform_float(cfg.gamma.lo, cfg.gamma.hi);
  p.sigma_b = rng.uniform_float(0.001f, cfg.sigma_bmax);
  p.sigma = rng.uniform_float(0.0f, cfg.sigma_max);
  p.color_order = {0, 1, 2, 3, 4};
  rng.shuffle(p.color_order.begin(), p.color_order.end());
  return p;
}

float rgb_to_gray(float r, float g, float b) {
  return 0.2989f * r + 0.587f * g + 0.114f * b;
}

namespace {

inline float clip01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

void clip_image(Image& img) {
  for (auto& v : img.data) v = clip01(v);
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max(r, std::max(g, b));
  const float mn = std::min(r, std::min(g, b));
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  if (mx == r)
    h = (g - b) / d;
  else if (mx == g)
    h = 2.0f + (b - r) / d;
  else
    h = 4.0f + (r - g) / d;
  h /= 6.0f;
  if (h < 0.0f) h += 1.0f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  if (s <= 0.0f) {
    r = g = b = v;
    return;
  }
  float hh = (h - std::floor(h)) * 6.0f;
  const int i = std::min(5, static_cast<int>(hh));
  const float f = hh - static_cast<float>(i);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (i) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

// Identity-valued parameters are skipped outright so a fully collapsed
// TtaConfig reproduces the input bit for bit.
void color_step(Image& img, int which, const TtaParams& p) {
  const int c = img.shape[2];
  const long long pixels = img.size() / c;
  switch (which) {
    case 0: {  // brightness: b * x
      if (p.brightness == 1.0f) return;
      for (auto& v : img.data) v = clip01(p.brightness * v);
      return;
    }
    case 1: {  // contrast: c * x + (1 - c) * mean(gray)
      if (p.contrast == 1.0f) return;
      float mean_gray = 0.0f;
      if (c == 3) {
        double acc = 0.0;
        for (long long i = 0; i < pixels; ++i) {
          const float* px = img.ptr() + i * 3;
          acc += rgb_to_gray(px[0], px[1], px[2]);
        }
        mean_gray = static_cast<float>(acc / static_cast<double>(pixels));
      } else {
        double acc = 0.0;
        for (const float v : img.data) acc += v;
        mean_gray = static_cast<float>(acc / static_cast<double>(img.size()));
      }
      const float off = (1.0f - p.contrast) * mean_gray;
      for (auto& v : img.data) v = clip01(p.contrast * v + off);
      return;
    }
    case 2: {  // saturation: sat * x + (1 - sat) * gray
      if (p.saturation == 1.0f || c != 3) return;
      for (long long i = 0; i < pixels; ++i) {
        float* px = img.ptr() + i * 3;
        const float gray = rgb_to_gray(px[0], px[1], px[2]);
        for (int k = 0; k < 3; ++k)
          px[k] = clip01(p.saturation * px[k] + (1.0f - p.saturation) * gray);
      }
      return;
    }
    case 3: {  // hue shift in HSV, wrapped
      if (p.hue == 0.0f || c != 3) return;
      for (long long i = 0; i < pixels; ++i) {
        float* px = img.ptr() + i * 3;
        float h, s, v;
        rgb_to_hsv(px[0], px[1], px[2], h, s, v);
        h += p.hue;
        h -= std::floor(h);
        hsv_to_rgb(h, s, v, px[0], px[1], px[2]);
        for (int k = 0; k < 3; ++k) px[k] = clip01(px[k]);
      }
      return;
    }
    default: {  // gamma: x^g
      if (p.gamma == 1.0f) return;
      for (auto& v : img.data) v = clip01(std::pow(v, p.gamma));
      return;
    }
  }
}

bool identity_affine(const TtaParams& p) {
  return p.angle_deg == 0.0f && p.dx == 0 && p.dy == 0 && p.scale == 1.0f;
}

int pad_size(const Image& img, const TtaParams&, int pad_target) {
  const int h = img.shape[0];
  return pad_target > h ? pad_target : 2 * h;
}

}  // namespace

Image apply_color(const Image& img, const TtaParams& params) {
  Image out = img;
  for (const uint8_t which : params.color_order) color_step(out, which, params);
  return out;
}

Image apply_affine(const Image& img, const TtaParams& params) {
  Image out = img;
  if (!identity_affine(params)) {
    const int target = pad_size(img, params, 0);
    Image padded = pad_edge(out, target, target);
    Image warped = warp_affine(padded, params.angle_deg, static_cast<float>(params.dx),
                               static_cast<float>(params.dy), params.scale);
    out = center_crop(warped, img.shape[0], img.shape[1]);
  }
  if (params.flip) out = hflip(out);
  return out;
}

Image apply_blur(const Image& img, float sigma_b) {
  if (!(sigma_b > 0.0f)) throw std::invalid_argument("apply_blur: sigma_b must be > 0");
  return gaussian_blur(img, static_cast<double>(sigma_b));
}

Image apply_noise(const Image& img, float sigma, Rng& rng) {
  if (sigma < 0.0f) throw std::invalid_argument("apply_noise: sigma must be >= 0");
  if (sigma == 0.0f) return img;
  Image out = img;
  for (auto& v : out.data) v = clip01(v + sigma * static_cast<float>(rng.normal()));
  return out;
}

Image apply_tta(const Image& img, const TtaParams& params, Rng& rng) {
  Image out = apply_color(img, params);
  const int target = pad_size(img, params, 0);
  out = pad_edge(out, target, target);
  if (!identity_affine(params))
    out = warp_affine(out, params.angle_deg, static_cast<float>(params.dx),
                      static_cast<float>(params.dy), params.scale);
  out = apply_blur(out, params.sigma_b);
  out = center_crop(out, img.shape[0], img.shape[1]);
  if (params.flip) out = hflip(out);
  out = apply_noise(out, params.sigma, rng);
  clip_image(out);
  return out;
}

std::vector<Image> generate_ttas(const Image& img, const TtaConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::vector<Image> out(cfg.n);
  parallel_for(cfg.n, [&](long long i) {
    Rng rng = Rng::stream(seed, static_cast<uint64_t>(i));
    const TtaParams params = sample_params(cfg, rng);
    out[i] = apply_tta(img, params, rng);
  });
  return out;
}

}  // namespace katana
