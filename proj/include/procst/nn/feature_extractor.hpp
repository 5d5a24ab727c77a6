#pragma once

#include <array>

#include "procst/nn/layers.hpp"

namespace procst {

inline constexpr std::uint64_t kDefaultExtractorSeed = 0x5eed0f0df2a7c0deULL;

/// Fixed random-weight feature net: 4 stages of conv3 -> leaky -> avgpool2,
/// widths 16/32/64/64. Stage 3 is the content tap, stages 1-4 the style taps.
/// Weights are immutable and fully determined by the seed.
template <typename T>
struct FeatureExtractor {
  static constexpr int kStages = 4;
  static constexpr int kContentStage = 3;  // 1-based
  std::uint64_t seed = kDefaultExtractorSeed;
  std::array<Conv2dLayer<T>, kStages> convs;

  explicit FeatureExtractor(std::uint64_t seed_ = kDefaultExtractorSeed) : seed(seed_) {
    static constexpr int widths[kStages] = {16, 32, 64, 64};
    Rng rng = Rng::derive(seed_, 0x00fefe);
    int ci = 3;
    for (int i = 0; i < kStages; ++i) {
      convs[static_cast<std::size_t>(i)] = Conv2dLayer<T>(ci, widths[i], 3, 1, 1, rng);
      set_trainable<T>(convs[static_cast<std::size_t>(i)], false);
      ci = widths[i];
    }
  }

  /// All stage outputs, index k holds stage k+1.
  std::array<Var<T>, kStages> stages(const Var<T>& img) const {
    std::array<Var<T>, kStages> out;
    Var<T> x = img;
    for (int i = 0; i < kStages; ++i) {
      x = avgpool2(leaky_relu(convs[static_cast<std::size_t>(i)].forward(x), T(0.2)));
      out[static_cast<std::size_t>(i)] = x;
    }
    return out;
  }

  Var<T> content(const Var<T>& img) const { return stages(img)[kContentStage - 1]; }
};

}  // namespace procst
