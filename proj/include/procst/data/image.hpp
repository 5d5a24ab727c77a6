#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "procst/core/error.hpp"
#include "procst/core/tensor.hpp"

namespace procst {

struct DomainSpec {
  int height = 64;
  int width = 128;
  int channels = 3;
  int num_classes = 5;

  void validate() const {
    if (height < 16 || width < 16) throw ConfigError("DomainSpec: dims must be >= 16");
    if (channels != 3) throw ConfigError("DomainSpec: channels must be 3");
    if (num_classes < 2) throw ConfigError("DomainSpec: need at least 2 classes");
  }
};

/// Image pixels live in [-1,1], stored channel-major [3,H,W].
struct LabeledImage {
  Tensor<float> pixels;
  Tensor<std::uint8_t> label;  // [H,W], values in 0..K-1
};

struct UnlabeledImage {
  Tensor<float> pixels;
};

struct ScaleSpec {
  int num_scales = 3;
  double scale_factor = 0.5;
  int top_h = 64;
  int top_w = 128;
  std::vector<std::pair<int, int>> per_scale_dims;  // index n-1 holds (H_n, W_n)

  static ScaleSpec make(int n_scales, double r, int top_h, int top_w) {
    if (n_scales < 1) throw ConfigError("ScaleSpec: num_scales must be >= 1");
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("ScaleSpec: scale_factor must be in (0,1)");
    ScaleSpec s;
    s.num_scales = n_scales;
    s.scale_factor = r;
    s.top_h = top_h;
    s.top_w = top_w;
    s.per_scale_dims.resize(static_cast<std::size_t>(n_scales));
    for (int n = 1; n <= n_scales; ++n) {
      double f = std::pow(r, n_scales - n);
      int h = static_cast<int>(std::floor(f * top_h + 0.5));
      int w = static_cast<int>(std::floor(f * top_w + 0.5));
      if (h < 1 || w < 1) throw ConfigError("ScaleSpec: scale " + std::to_string(n) + " collapses");
      s.per_scale_dims[static_cast<std::size_t>(n - 1)] = {h, w};
    }
    for (int n = 2; n <= n_scales; ++n)
      if (s.per_scale_dims[static_cast<std::size_t>(n - 1)] <=
          s.per_scale_dims[static_cast<std::size_t>(n - 2)])
        throw ConfigError("ScaleSpec: dims must strictly increase with scale");
    return s;
  }
};

inline std::pair<int, int> scale_dims(int n, const ScaleSpec& spec) {
  if (n < 1 || n > spec.num_scales)
    throw ArgError("scale_dims: scale index " + std::to_string(n) + " out of range 1.." +
                   std::to_string(spec.num_scales));
  if (spec.per_scale_dims.size() != static_cast<std::size_t>(spec.num_scales))
    throw ConfigError("ScaleSpec: per-scale dims not materialized (use ScaleSpec::make)");
  return spec.per_scale_dims[static_cast<std::size_t>(n - 1)];
}

}  // namespace procst
