#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "procst/core/error.hpp"

namespace procst {

/// Two-tap half-pixel bilinear sampling table along one axis.
struct BilinearTaps {
  std::vector<int> i0, i1;
  std::vector<double> w0, w1;

  BilinearTaps(int src, int dst) : i0(dst), i1(dst), w0(dst), w1(dst) {
    double scale = static_cast<double>(src) / dst;
    for (int i = 0; i < dst; ++i) {
      double s = (i + 0.5) * scale - 0.5;
      double f = std::floor(s);
      int lo = static_cast<int>(f);
      double frac = s - f;
      int hi = lo + 1;
      lo = std::clamp(lo, 0, src - 1);
      hi = std::clamp(hi, 0, src - 1);
      i0[i] = lo;
      i1[i] = hi;
      w0[i] = 1.0 - frac;
      w1[i] = frac;
    }
  }
};

template <typename T>
inline void bilinear_resize_plane(const T* src, int h, int w, T* dst, int h2, int w2,
                                  const BilinearTaps& ty, const BilinearTaps& tx) {
  for (int y = 0; y < h2; ++y) {
    const T* r0 = src + static_cast<std::size_t>(ty.i0[y]) * w;
    const T* r1 = src + static_cast<std::size_t>(ty.i1[y]) * w;
    T wy0 = static_cast<T>(ty.w0[y]), wy1 = static_cast<T>(ty.w1[y]);
    T* out = dst + static_cast<std::size_t>(y) * w2;
    for (int x = 0; x < w2; ++x) {
      T a = r0[tx.i0[x]] * static_cast<T>(tx.w0[x]) + r0[tx.i1[x]] * static_cast<T>(tx.w1[x]);
      T b = r1[tx.i0[x]] * static_cast<T>(tx.w0[x]) + r1[tx.i1[x]] * static_cast<T>(tx.w1[x]);
      out[x] = wy0 * a + wy1 * b;
    }
  }
}

/// Transpose of bilinear_resize_plane: scatters dst-shaped grads back onto
/// the src grid. Accumulates into `src_grad`.
template <typename T>
inline void bilinear_scatter_plane(const T* dst_grad, int h2, int w2, T* src_grad, int h, int w,
                                   const BilinearTaps& ty, const BilinearTaps& tx) {
  for (int y = 0; y < h2; ++y) {
    T* r0 = src_grad + static_cast<std::size_t>(ty.i0[y]) * w;
    T* r1 = src_grad + static_cast<std::size_t>(ty.i1[y]) * w;
    T wy0 = static_cast<T>(ty.w0[y]), wy1 = static_cast<T>(ty.w1[y]);
    const T* g = dst_grad + static_cast<std::size_t>(y) * w2;
    for (int x = 0; x < w2; ++x) {
      T gx0 = g[x] * static_cast<T>(tx.w0[x]);
      T gx1 = g[x] * static_cast<T>(tx.w1[x]);
      r0[tx.i0[x]] += wy0 * gx0;
      r0[tx.i1[x]] += wy0 * gx1;
      r1[tx.i0[x]] += wy1 * gx0;
      r1[tx.i1[x]] += wy1 * gx1;
    }
  }
}

/// Anti-aliased area (box coverage) downsample of one plane. Exact block
/// averaging when src is an integer multiple of dst.
template <typename T>
inline void area_resize_plane(const T* src, int h, int w, T* dst, int h2, int w2) {
  if (h2 > h || w2 > w) throw ShapeError("area_resize_plane: upscaling unsupported");
  auto spans = [](int s, int d) {
    // Per output index: list of (src index, coverage weight), weights sum to 1.
    std::vector<std::vector<std::pair<int, double>>> out(static_cast<std::size_t>(d));
    double scale = static_cast<double>(s) / d;
    for (int i = 0; i < d; ++i) {
      double lo = i * scale, hi = (i + 1) * scale;
      int a = static_cast<int>(std::floor(lo));
      int b = std::min(s - 1, static_cast<int>(std::ceil(hi)) - 1);
      for (int j = a; j <= b; ++j) {
        double cov = std::min(hi, static_cast<double>(j + 1)) - std::max(lo, static_cast<double>(j));
        if (cov > 0) out[static_cast<std::size_t>(i)].push_back({j, cov / scale});
      }
    }
    return out;
  };
  auto ys = spans(h, h2);
  auto xs = spans(w, w2);
  for (int y = 0; y < h2; ++y) {
    T* out = dst + static_cast<std::size_t>(y) * w2;
    for (int x = 0; x < w2; ++x) {
      double acc = 0;
      for (auto [sy, wy] : ys[static_cast<std::size_t>(y)])
        for (auto [sx, wx] : xs[static_cast<std::size_t>(x)])
          acc += wy * wx * static_cast<double>(src[static_cast<std::size_t>(sy) * w + sx]);
      out[x] = static_cast<T>(acc);
    }
  }
}

/// Center-aligned nearest-neighbor pick, downscale only.
template <typename U>
inline void nearest_resize_plane(const U* src, int h, int w, U* dst, int h2, int w2) {
  for (int y = 0; y < h2; ++y) {
    int sy = std::min(h - 1, static_cast<int>((y + 0.5) * h / h2));
    for (int x = 0; x < w2; ++x) {
      int sx = std::min(w - 1, static_cast<int>((x + 0.5) * w / w2));
      dst[static_cast<std::size_t>(y) * w2 + x] = src[static_cast<std::size_t>(sy) * w + sx];
    }
  }
}

}  // namespace procst
