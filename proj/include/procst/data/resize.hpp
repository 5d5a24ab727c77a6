#pragma once

#include <vector>

#include "procst/core/resample.hpp"
#include "procst/data/image.hpp"

namespace procst {

/// Area-average downscale of a [C,H,W] image (anti-aliased).
template <typename T>
inline Tensor<T> resize_area(const Tensor<T>& img, int h2, int w2) {
  if (img.rank() != 3) throw ShapeError("resize_area: [C,H,W] required");
  int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  Tensor<T> out({c, h2, w2});
  for (int j = 0; j < c; ++j)
    area_resize_plane(img.data() + static_cast<std::size_t>(j) * h * w, h, w,
                      out.data() + static_cast<std::size_t>(j) * h2 * w2, h2, w2);
  return out;
}

template <typename T>
inline Tensor<T> resize_bilinear(const Tensor<T>& img, int h2, int w2) {
  if (img.rank() != 3) throw ShapeError("resize_bilinear: [C,H,W] required");
  int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  BilinearTaps ty(h, h2), tx(w, w2);
  Tensor<T> out({c, h2, w2});
  for (int j = 0; j < c; ++j)
    bilinear_resize_plane(img.data() + static_cast<std::size_t>(j) * h * w, h, w,
                          out.data() + static_cast<std::size_t>(j) * h2 * w2, h2, w2, ty, tx);
  return out;
}

/// Pyramid levels 1..N; level N is the unmodified input, lower levels are
/// area-averaged straight from it.
template <typename T>
inline std::vector<Tensor<T>> build_pyramid(const Tensor<T>& img, const ScaleSpec& spec) {
  if (img.rank() != 3) throw ShapeError("build_pyramid: [C,H,W] required");
  if (img.dim(1) != spec.top_h || img.dim(2) != spec.top_w)
    throw ShapeError("build_pyramid: input " + img.shape_str() + " does not match top dims");
  std::vector<Tensor<T>> levels;
  levels.reserve(static_cast<std::size_t>(spec.num_scales));
  for (int n = 1; n <= spec.num_scales; ++n) {
    auto [h, w] = scale_dims(n, spec);
    if (n == spec.num_scales)
      levels.push_back(img);
    else
      levels.push_back(resize_area(img, h, w));
  }
  return levels;
}

/// Nearest-neighbor label downscale; refuses to upscale.
inline Tensor<std::uint8_t> resize_label(const Tensor<std::uint8_t>& label, int h2, int w2) {
  if (label.rank() != 2) throw ShapeError("resize_label: [H,W] required");
  int h = label.dim(0), w = label.dim(1);
  if (h2 > h || w2 > w) throw ArgError("resize_label: upscaling not supported");
  Tensor<std::uint8_t> out({h2, w2});
  nearest_resize_plane(label.data(), h, w, out.data(), h2, w2);
  return out;
}

}  // namespace procst
