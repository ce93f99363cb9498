#pragma once

// Dense compute kernels. Every parallel kernel partitions its output into
// disjoint slices (or reduces in a fixed order), so the OpenMP variants are
// bit-identical to the serial references; tests assert this and
// bench/kernel_bench compares their throughput.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "katana/parallel.hpp"
#include "katana/tensor.hpp"

namespace katana {

// ---------------------------------------------------------------------------
// conv2d, stride 1, zero padding, odd kernel. Layouts:
//   activations  H x W x C        (row-major)
//   weights      KH x KW x Ci x Co
// ---------------------------------------------------------------------------

template <typename T>
void conv2d_forward_row(const T* in, int h, int w, int ci, const T* wgt, int kh, int kw, int co,
                        const T* bias, T* out, int y) {
  const int py = kh / 2, px = kw / 2;
  for (int x = 0; x < w; ++x) {
    T* o = out + (static_cast<long long>(y) * w + x) * co;
    for (int c = 0; c < co; ++c) o[c] = bias ? bias[c] : T(0);
    for (int ky = 0; ky < kh; ++ky) {
      const int sy = y + ky - py;
      if (sy < 0 || sy >= h) continue;
      for (int kx = 0; kx < kw; ++kx) {
        const int sx = x + kx - px;
        if (sx < 0 || sx >= w) continue;
        const T* ip = in + (static_cast<long long>(sy) * w + sx) * ci;
        const T* wp = wgt + ((static_cast<long long>(ky) * kw + kx) * ci) * co;
        for (int c = 0; c < ci; ++c) {
          const T v = ip[c];
          const T* wrow = wp + static_cast<long long>(c) * co;
          for (int oc = 0; oc < co; ++oc) o[oc] += v * wrow[oc];
        }
      }
    }
  }
}

template <typename T>
void conv2d_forward_serial(const T* in, int h, int w, int ci, const T* wgt, int kh, int kw, int co,
                           const T* bias, T* out) {
  for (int y = 0; y < h; ++y) conv2d_forward_row(in, h, w, ci, wgt, kh, kw, co, bias, out, y);
}

template <typename T>
void conv2d_forward_omp(const T* in, int h, int w, int ci, const T* wgt, int kh, int kw, int co,
                        const T* bias, T* out) {
  parallel_for(h, [&](long long y) {
    conv2d_forward_row(in, h, w, ci, wgt, kh, kw, co, bias, out, static_cast<int>(y));
  });
}

template <typename T>
void conv2d_forward(const T* in, int h, int w, int ci, const T* wgt, int kh, int kw, int co,
                    const T* bias, T* out) {
  if (!in_parallel_region() && static_cast<long long>(h) * w * ci * co >= 1 << 16)
    conv2d_forward_omp(in, h, w, ci, wgt, kh, kw, co, bias, out);
  else
    conv2d_forward_serial(in, h, w, ci, wgt, kh, kw, co, bias, out);
}

// Input gradient as a gather over output positions; one output row of din per
// iteration, so rows can run in parallel.
template <typename T>
void conv2d_backward_input_row(const T* dout, int h, int w, int ci, const T* wgt, int kh, int kw,
                               int co, T* din, int iy) {
  const int py = kh / 2, px = kw / 2;
  for (int ix = 0; ix < w; ++ix) {
    T* d = din + (static_cast<long long>(iy) * w + ix) * ci;
    for (int c = 0; c < ci; ++c) d[c] = T(0);
    for (int ky = 0; ky < kh; ++ky) {
      const int oy = iy - ky + py;
      if (oy < 0 || oy >= h) continue;
      for (int kx = 0; kx < kw; ++kx) {
        const int ox = ix - kx + px;
        if (ox < 0 || ox >= w) continue;
        const T* dp = dout + (static_cast<long long>(oy) * w + ox) * co;
        const T* wp = wgt + ((static_cast<long long>(ky) * kw + kx) * ci) * co;
        for (int c = 0; c < ci; ++c) {
          const T* wrow = wp + static_cast<long long>(c) * co;
          T acc = T(0);
          for (int oc = 0; oc < co; ++oc) acc += dp[oc] * wrow[oc];
          d[c] += acc;
        }
      }
    }
  }
}

// Weight gradient gathered per kernel tap; taps are disjoint slices of dwgt.
template <typename T>
void conv2d_backward_weight_tap(const T* in, int h, int w, int ci, const T* dout, int kh, int kw,
                                int co, T* dwgt, T* dbias, int tap) {
  const int py = kh / 2, px = kw / 2;
  const int ky = tap / kw, kx = tap % kw;
  T* dw = dwgt + (static_cast<long long>(tap) * ci) * co;
  for (long long i = 0; i < static_cast<long long>(ci) * co; ++i) dw[i] = T(0);
  for (int y = 0; y < h; ++y) {
    const int sy = y + ky - py;
    if (sy < 0 || sy >= h) continue;
    for (int x = 0; x < w; ++x) {
      const int sx = x + kx - px;
      if (sx < 0 || sx >= w) continue;
      const T* ip = in + (static_cast<long long>(sy) * w + sx) * ci;
      const T* dp = dout + (static_cast<long long>(y) * w + x) * co;
      for (int c = 0; c < ci; ++c) {
        const T v = ip[c];
        T* row = dw + static_cast<long long>(c) * co;
        for (int oc = 0; oc < co; ++oc) row[oc] += v * dp[oc];
      }
    }
  }
  if (dbias && tap == 0) {
    for (int oc = 0; oc < co; ++oc) dbias[oc] = T(0);
    for (long long p = 0; p < static_cast<long long>(h) * w; ++p)
      for (int oc = 0; oc < co; ++oc) dbias[oc] += dout[p * co + oc];
  }
}

template <typename T>
void conv2d_backward_serial(const T* in, int h, int w, int ci, const T* wgt, int kh, int kw, int co,
                            const T* dout, T* din, T* dwgt, T* dbias) {
  if (din)
    for (int y = 0; y < h; ++y) conv2d_backward_input_row(dout, h, w, ci, wgt, kh, kw, co, din, y);
  if (dwgt)
    for (int tap = 0; tap < kh * kw; ++tap)
      conv2d_backward_weight_tap(in, h, w, ci, dout, kh, kw, co, dwgt, dbias, tap);
}

template <typename T>
void conv2d_backward_omp(const T* in, int h, int w, int ci, const T* wgt, int kh, int kw, int co,
                         const T* dout, T* din, T* dwgt, T* dbias) {
  if (din)
    parallel_for(h, [&](long long y) {
      conv2d_backward_input_row(dout, h, w, ci, wgt, kh, kw, co, din, static_cast<int>(y));
    });
  if (dwgt)
    parallel_for(kh * kw, [&](long long tap) {
      conv2d_backward_weight_tap(in, h, w, ci, dout, kh, kw, co, dwgt, dbias,
                                 static_cast<int>(tap));
    });
}

template <typename T>
void conv2d_backward(const T* in, int h, int w, int ci, const T* wgt, int kh, int kw, int co,
                     const T* dout, T* din, T* dwgt, T* dbias) {
  if (!in_parallel_region() && static_cast<long long>(h) * w * ci * co >= 1 << 16)
    conv2d_backward_omp(in, h, w, ci, wgt, kh, kw, co, dout, din, dwgt, dbias);
  else
    conv2d_backward_serial(in, h, w, ci, wgt, kh, kw, co, dout, din, dwgt, dbias);
}

// ---------------------------------------------------------------------------
// dense: y[o] = b[o] + sum_i x[i] * w[i*out + o]
// ---------------------------------------------------------------------------

template <typename T>
void dense_forward(const T* x, int in, const T* wgt, int out, const T* bias, T* y) {
  for (int o = 0; o < out; ++o) y[o] = bias ? bias[o] : T(0);
  for (int i = 0; i < in; ++i) {
    const T v = x[i];
    const T* wrow = wgt + static_cast<long long>(i) * out;
    for (int o = 0; o < out; ++o) y[o] += v * wrow[o];
  }
}

template <typename T>
void dense_backward(const T* x, int in, const T* wgt, int out, const T* dy, T* dx, T* dwgt,
                    T* dbias) {
  if (dx)
    for (int i = 0; i < in; ++i) {
      const T* wrow = wgt + static_cast<long long>(i) * out;
      T acc = T(0);
      for (int o = 0; o < out; ++o) acc += dy[o] * wrow[o];
      dx[i] = acc;
    }
  if (dwgt)
    for (int i = 0; i < in; ++i) {
      T* row = dwgt + static_cast<long long>(i) * out;
      const T v = x[i];
      for (int o = 0; o < out; ++o) row[o] = v * dy[o];
    }
  if (dbias)
    for (int o = 0; o < out; ++o) dbias[o] = dy[o];
}

// ---------------------------------------------------------------------------
// 2x2 average pool (H, W even) and global average pool.
// ---------------------------------------------------------------------------

template <typename T>
void avgpool2_forward(const T* in, int h, int w, int c, T* out) {
  const int oh = h / 2, ow = w / 2;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const T* p00 = in + ((2LL * y) * w + 2 * x) * c;
      const T* p01 = p00 + c;
      const T* p10 = p00 + static_cast<long long>(w) * c;
      const T* p11 = p10 + c;
      T* o = out + (static_cast<long long>(y) * ow + x) * c;
      for (int k = 0; k < c; ++k) o[k] = (p00[k] + p01[k] + p10[k] + p11[k]) * T(0.25);
    }
}

template <typename T>
void avgpool2_backward(const T* dout, int h, int w, int c, T* din) {
  const int oh = h / 2, ow = w / 2;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      const T* d = dout + (static_cast<long long>(y) * ow + x) * c;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) {
          T* p = din + ((2LL * y + dy) * w + 2 * x + dx) * c;
          for (int k = 0; k < c; ++k) p[k] = d[k] * T(0.25);
        }
    }
}

template <typename T>
void global_avg_pool_forward(const T* in, int h, int w, int c, T* out) {
  const long long hw = static_cast<long long>(h) * w;
  for (int k = 0; k < c; ++k) out[k] = T(0);
  for (long long p = 0; p < hw; ++p)
    for (int k = 0; k < c; ++k) out[k] += in[p * c + k];
  const T inv = T(1) / static_cast<T>(hw);
  for (int k = 0; k < c; ++k) out[k] *= inv;
}

template <typename T>
void global_avg_pool_backward(const T* dout, int h, int w, int c, T* din) {
  const long long hw = static_cast<long long>(h) * w;
  const T inv = T(1) / static_cast<T>(hw);
  for (long long p = 0; p < hw; ++p)
    for (int k = 0; k < c; ++k) din[p * c + k] = dout[k] * inv;
}

// ---------------------------------------------------------------------------
// Image primitives (float, H x W x C).
// ---------------------------------------------------------------------------

inline int clamp_int(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

inline Image pad_edge(const Image& img, int th, int tw) {
  const int h = img.shape[0], w = img.shape[1], c = img.shape[2];
  Image out({th, tw, c});
  const int oy = (th - h) / 2, ox = (tw - w) / 2;
  for (int y = 0; y < th; ++y) {
    const int sy = clamp_int(y - oy, 0, h - 1);
    for (int x = 0; x < tw; ++x) {
      const int sx = clamp_int(x - ox, 0, w - 1);
      const float* s = img.ptr() + (static_cast<long long>(sy) * w + sx) * c;
      float* d = out.ptr() + (static_cast<long long>(y) * tw + x) * c;
      for (int k = 0; k < c; ++k) d[k] = s[k];
    }
  }
  return out;
}

inline Image center_crop(const Image& img, int th, int tw) {
  const int h = img.shape[0], w = img.shape[1], c = img.shape[2];
  Image out({th, tw, c});
  const int oy = (h - th) / 2, ox = (w - tw) / 2;
  for (int y = 0; y < th; ++y)
    for (int x = 0; x < tw; ++x) {
      const float* s = img.ptr() + (static_cast<long long>(y + oy) * w + (x + ox)) * c;
      float* d = out.ptr() + (static_cast<long long>(y) * tw + x) * c;
      for (int k = 0; k < c; ++k) d[k] = s[k];
    }
  return out;
}

inline Image hflip(const Image& img) {
  const int h = img.shape[0], w = img.shape[1], c = img.shape[2];
  Image out({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float* s = img.ptr() + (static_cast<long long>(y) * w + (w - 1 - x)) * c;
      float* d = out.ptr() + (static_cast<long long>(y) * w + x) * c;
      for (int k = 0; k < c; ++k) d[k] = s[k];
    }
  return out;
}

// Inverse-mapped affine warp about the image center: the forward transform
// scales by `s`, rotates by `angle_deg` and then shifts by (dx, dy) pixels.
// Bilinear sampling, coordinates clamped to the image.
void warp_affine_serial(const Image& in, float angle_deg, float dx, float dy, float s, Image& out);
void warp_affine_omp(const Image& in, float angle_deg, float dx, float dy, float s, Image& out);
Image warp_affine(const Image& in, float angle_deg, float dx, float dy, float s);

// Separable Gaussian blur with edge-replicate boundary; taps at integer
// offsets in [-r, r], r = max(1, ceil(3*sigma)), renormalized to sum 1.
std::vector<double> gaussian_taps(double sigma);
void gaussian_blur_serial(const Image& in, double sigma, Image& out);
void gaussian_blur_omp(const Image& in, double sigma, Image& out);
Image gaussian_blur(const Image& in, double sigma);

}  // namespace katana
