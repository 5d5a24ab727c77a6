#pragma once

#include <vector>

#include "procst/core/gemm.hpp"
#include "procst/core/tensor.hpp"

namespace procst {

/// Output spatial size of a k×k conv: floor((in + 2*pad - k) / stride) + 1.
inline int conv_out_dim(int in, int k, int stride, int pad) {
  int v = (in + 2 * pad - k) / stride + 1;
  if (v <= 0) throw ShapeError("conv: non-positive output dim");
  return v;
}

namespace detail {

template <typename T>
inline void im2col(const T* x, int ci, int h, int w, int kh, int kw, int stride, int pad, int ho,
                   int wo, T* col) {
  // col is [ci*kh*kw, ho*wo]
  for (int c = 0; c < ci; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* row = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) *
                           static_cast<std::size_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ki;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < wo; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < w) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
inline void col2im(const T* col, int ci, int h, int w, int kh, int kw, int stride, int pad, int ho,
                   int wo, T* x) {
  // accumulates into x [ci, h, w]
  for (int c = 0; c < ci; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) *
                                 static_cast<std::size_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          T* drow = plane + static_cast<std::size_t>(iy) * w;
          const T* srow = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// y[B,Co,Ho,Wo] = x[B,Ci,H,W] * w[Co,Ci,Kh,Kw] (cross-correlation).
template <typename T>
inline Tensor<T> conv_forward_raw(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4) throw ShapeError("conv: rank-4 inputs required");
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv: channel mismatch " + x.shape_str() + " vs " + w.shape_str());
  int b = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  int ho = conv_out_dim(h, kh, stride, pad), wo = conv_out_dim(wd, kw, stride, pad);
  auto y = Tensor<T>::uninit({b, co, ho, wo});
  int kk = ci * kh * kw, hw = ho * wo;
  std::vector<T, detail::RawAlloc<T>> col(static_cast<std::size_t>(kk) * hw);
  for (int i = 0; i < b; ++i) {
    detail::im2col(x.data() + static_cast<std::size_t>(i) * ci * h * wd, ci, h, wd, kh, kw, stride,
                   pad, ho, wo, col.data());
    gemm(false, false, co, hw, kk, T(1), w.data(), kk, col.data(), hw, T(0),
         y.data() + static_cast<std::size_t>(i) * co * hw, hw);
  }
  return y;
}

/// Gradient w.r.t. the conv input: gx[B,Ci,H,W] from gy[B,Co,Ho,Wo].
template <typename T>
inline Tensor<T> conv_input_grad_raw(const Tensor<T>& gy, const Tensor<T>& w, int stride, int pad,
                                     int h, int wd) {
  int b = gy.dim(0), co = gy.dim(1), ho = gy.dim(2), wo = gy.dim(3);
  int ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != co) throw ShapeError("conv_input_grad: weight/grad channel mismatch");
  Tensor<T> gx({b, ci, h, wd});
  int kk = ci * kh * kw, hw = ho * wo;
  std::vector<T, detail::RawAlloc<T>> col(static_cast<std::size_t>(kk) * hw);
  for (int i = 0; i < b; ++i) {
    gemm(true, false, kk, hw, co, T(1), w.data(), kk,
         gy.data() + static_cast<std::size_t>(i) * co * hw, hw, T(0), col.data(), hw);
    detail::col2im(col.data(), ci, h, wd, kh, kw, stride, pad, ho, wo,
                   gx.data() + static_cast<std::size_t>(i) * ci * h * wd);
  }
  return gx;
}

/// Gradient w.r.t. the conv weights: gw[Co,Ci,Kh,Kw], summed over the batch.
template <typename T>
inline Tensor<T> conv_weight_grad_raw(const Tensor<T>& x, const Tensor<T>& gy, int stride, int pad,
                                      int kh, int kw) {
  int b = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int co = gy.dim(1), ho = gy.dim(2), wo = gy.dim(3);
  auto gw = Tensor<T>::uninit({co, ci, kh, kw});
  int kk = ci * kh * kw, hw = ho * wo;
  std::vector<T, detail::RawAlloc<T>> col(static_cast<std::size_t>(kk) * hw);
  for (int i = 0; i < b; ++i) {
    detail::im2col(x.data() + static_cast<std::size_t>(i) * ci * h * wd, ci, h, wd, kh, kw, stride,
                   pad, ho, wo, col.data());
    gemm(false, true, co, kk, hw, T(1), gy.data() + static_cast<std::size_t>(i) * co * hw, hw,
         col.data(), hw, i == 0 ? T(0) : T(1), gw.data(), kk);
  }
  return gw;
}

}  // namespace procst
