#include "katana/kernels.hpp"

#include <cmath>

namespace katana {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct AffineMap {
  // dst -> src:  src = R(-a) * (dst - c - t) / s + c
  float m00, m01, m10, m11;
  float cx, cy, tx, ty;
};

inline AffineMap make_inverse_map(const Image& img, float angle_deg, float dx, float dy, float s) {
  AffineMap m{};
  const double a = static_cast<double>(angle_deg) * kPi / 180.0;
  const double inv_s = 1.0 / static_cast<double>(s);
  m.m00 = static_cast<float>(std::cos(a) * inv_s);
  m.m01 = static_cast<float>(std::sin(a) * inv_s);
  m.m10 = static_cast<float>(-std::sin(a) * inv_s);
  m.m11 = static_cast<float>(std::cos(a) * inv_s);
  m.cx = 0.5f * static_cast<float>(img.shape[1] - 1);
  m.cy = 0.5f * static_cast<float>(img.shape[0] - 1);
  m.tx = dx;
  m.ty = dy;
  return m;
}

inline void warp_row(const Image& in, const AffineMap& m, Image& out, int y) {
  const int h = in.shape[0], w = in.shape[1], c = in.shape[2];
  const float fy = static_cast<float>(y) - m.cy - m.ty;
  for (int x = 0; x < w; ++x) {
    const float fx = static_cast<float>(x) - m.cx - m.tx;
    const float sx = m.m00 * fx + m.m01 * fy + m.cx;
    const float sy = m.m10 * fx + m.m11 * fy + m.cy;
    const float fsx = std::floor(sx), fsy = std::floor(sy);
    const int x0 = clamp_int(static_cast<int>(fsx), 0, w - 1);
    const int x1 = clamp_int(static_cast<int>(fsx) + 1, 0, w - 1);
    const int y0 = clamp_int(static_cast<int>(fsy), 0, h - 1);
    const int y1 = clamp_int(static_cast<int>(fsy) + 1, 0, h - 1);
    const float ax = sx - fsx, ay = sy - fsy;
    const float* p00 = in.ptr() + (static_cast<long long>(y0) * w + x0) * c;
    const float* p01 = in.ptr() + (static_cast<long long>(y0) * w + x1) * c;
    const float* p10 = in.ptr() + (static_cast<long long>(y1) * w + x0) * c;
    const float* p11 = in.ptr() + (static_cast<long long>(y1) * w + x1) * c;
    float* d = out.ptr() + (static_cast<long long>(y) * w + x) * c;
    for (int k = 0; k < c; ++k) {
      const float top = (1.0f - ax) * p00[k] + ax * p01[k];
      const float bot = (1.0f - ax) * p10[k] + ax * p11[k];
      d[k] = (1.0f - ay) * top + ay * bot;
    }
  }
}

inline void blur_pass(const float* in, int h, int w, int c, const std::vector<double>& taps,
                      bool horizontal, float* out, int y) {
  const int r = static_cast<int>(taps.size() / 2);
  for (int x = 0; x < w; ++x)
    for (int k = 0; k < c; ++k) {
      double acc = 0.0;
      for (int t = -r; t <= r; ++t) {
        const int sy = horizontal ? y : clamp_int(y + t, 0, h - 1);
        const int sx = horizontal ? clamp_int(x + t, 0, w - 1) : x;
        acc += taps[t + r] * in[(static_cast<long long>(sy) * w + sx) * c + k];
      }
      out[(static_cast<long long>(y) * w + x) * c + k] = static_cast<float>(acc);
    }
}

}  // namespace

void warp_affine_serial(const Image& in, float angle_deg, float dx, float dy, float s, Image& out) {
  out = Image(in.shape);
  const AffineMap m = make_inverse_map(in, angle_deg, dx, dy, s);
  for (int y = 0; y < in.shape[0]; ++y) warp_row(in, m, out, y);
}

void warp_affine_omp(const Image& in, float angle_deg, float dx, float dy, float s, Image& out) {
  out = Image(in.shape);
  const AffineMap m = make_inverse_map(in, angle_deg, dx, dy, s);
  parallel_for(in.shape[0], [&](long long y) { warp_row(in, m, out, static_cast<int>(y)); });
}

Image warp_affine(const Image& in, float angle_deg, float dx, float dy, float s) {
  Image out;
  if (!in_parallel_region() && in.size() >= 1 << 14)
    warp_affine_omp(in, angle_deg, dx, dy, s, out);
  else
    warp_affine_serial(in, angle_deg, dx, dy, s, out);
  return out;
}

std::vector<double> gaussian_taps(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * r + 1);
  double sum = 0.0;
  for (int t = -r; t <= r; ++t) {
    const double v = std::exp(-(static_cast<double>(t) * t) / (2.0 * sigma * sigma));
    taps[t + r] = v;
    sum += v;
  }
  for (auto& v : taps) v /= sum;
  return taps;
}

void gaussian_blur_serial(const Image& in, double sigma, Image& out) {
  const int h = in.shape[0], w = in.shape[1], c = in.shape[2];
  const auto taps = gaussian_taps(sigma);
  const int r = static_cast<int>(taps.size() / 2);
  bool delta = true;
  for (int t = -r; t <= r; ++t)
    if (t != 0 && taps[t + r] != 0.0) delta = false;
  if (delta) {  // kernel underflowed to an exact impulse
    out = in;
    return;
  }
  Image tmp({h, w, c});
  for (int y = 0; y < h; ++y) blur_pass(in.ptr(), h, w, c, taps, true, tmp.ptr(), y);
  out = Image({h, w, c});
  for (int y = 0; y < h; ++y) blur_pass(tmp.ptr(), h, w, c, taps, false, out.ptr(), y);
}

void gaussian_blur_omp(const Image& in, double sigma, Image& out) {
  const int h = in.shape[0], w = in.shape[1], c = in.shape[2];
  const auto taps = gaussian_taps(sigma);
  const int r = static_cast<int>(taps.size() / 2);
  bool delta = true;
  for (int t = -r; t <= r; ++t)
    if (t != 0 && taps[t + r] != 0.0) delta = false;
  if (delta) {
    out = in;
    return;
  }
  Image tmp({h, w, c});
  parallel_for(h, [&](long long y) {
    blur_pass(in.ptr(), h, w, c, taps, true, tmp.ptr(), static_cast<int>(y));
  });
  out = Image({h, w, c});
  parallel_for(h, [&](long long y) {
    blur_pass(tmp.ptr(), h, w, c, taps, false, out.ptr(), static_cast<int>(y));
  });
}

Image gaussian_blur(const Image& in, double sigma) {
  Image out;
  if (!in_parallel_region() && in.size() >= 1 << 14)
    gaussian_blur_omp(in, sigma, out);
  else
    gaussian_blur_serial(in, sigma, out);
  return out;
}

}  // namespace katana
