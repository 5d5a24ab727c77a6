#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "procst/core/rng.hpp"
#include "procst/data/image.hpp"

namespace procst {

namespace detail {

// Canonical class colors before any domain shift. Classes 0/1 are sky/ground,
// object classes cycle through this table.
inline std::array<float, 3> class_color(int cls) {
  static const std::array<float, 3> bg[2] = {{-0.10f, 0.20f, 0.60f}, {0.00f, -0.20f, -0.45f}};
  static const std::array<float, 3> obj[6] = {
      {0.60f, -0.05f, -0.40f}, {-0.55f, 0.05f, 0.35f}, {0.45f, 0.40f, -0.50f},
      {-0.30f, -0.50f, 0.10f}, {0.10f, 0.55f, 0.50f},  {0.65f, 0.30f, 0.45f},
  };
  if (cls < 2) return bg[cls];
  return obj[(cls - 2) % 6];
}

inline void paint(Tensor<float>& px, Tensor<std::uint8_t>& lab, int y, int x,
                  const std::array<float, 3>& color, int cls) {
  int h = lab.dim(0), w = lab.dim(1);
  if (y < 0 || y >= h || x < 0 || x >= w) return;
  for (int c = 0; c < 3; ++c)
    px[(static_cast<std::size_t>(c) * h + y) * static_cast<std::size_t>(w) + x] =
        color[static_cast<std::size_t>(c)];
  lab[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(cls);
}

inline void box3_blur(Tensor<float>& px) {
  int h = px.dim(1), w = px.dim(2);
  Tensor<float> src = px;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        float acc = 0.0f;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int yy = std::clamp(y + dy, 0, h - 1);
            int xx = std::clamp(x + dx, 0, w - 1);
            acc += src[(static_cast<std::size_t>(c) * h + yy) * static_cast<std::size_t>(w) + xx];
          }
        px[(static_cast<std::size_t>(c) * h + y) * static_cast<std::size_t>(w) + x] = acc / 9.0f;
      }
}

struct DomainShading {
  std::array<float, 3> bias;
  float noise_amp;
  bool blur;
};

inline LabeledImage gen_toy_scene(const DomainSpec& spec, Rng& rng, const DomainShading& sh) {
  int h = spec.height, w = spec.width, k = spec.num_classes;
  LabeledImage img;
  img.pixels = Tensor<float>({3, h, w});
  img.label = Tensor<std::uint8_t>({h, w});

  int horizon = static_cast<int>(rng.uniform(0.35, 0.65) * h);
  for (int y = 0; y < h; ++y) {
    int cls = y < horizon ? 0 : 1;
    auto col = class_color(cls);
    for (int x = 0; x < w; ++x) paint(img.pixels, img.label, y, x, col, cls);
  }

  int num_objects = k >= 3 ? k - 1 : 0;
  for (int o = 0; o < num_objects; ++o) {
    int cls = 2 + static_cast<int>(rng.uniform_int(k - 2));
    auto col = class_color(cls);
    for (auto& c : col) c = std::clamp(c + static_cast<float>(rng.uniform(-0.06, 0.06)), -1.0f, 1.0f);
    int shape = (cls - 2) % 3;
    int cy = static_cast<int>(rng.uniform(0.1, 0.9) * h);
    int cx = static_cast<int>(rng.uniform(0.1, 0.9) * w);
    if (shape == 0) {  // box
      int bh = std::max(2, static_cast<int>(rng.uniform(0.12, 0.30) * h));
      int bw = std::max(2, static_cast<int>(rng.uniform(0.12, 0.30) * w));
      for (int y = cy - bh / 2; y < cy + (bh + 1) / 2; ++y)
        for (int x = cx - bw / 2; x < cx + (bw + 1) / 2; ++x)
          paint(img.pixels, img.label, y, x, col, cls);
    } else if (shape == 1) {  // disc
      int r = std::max(2, static_cast<int>(rng.uniform(0.08, 0.18) * h));
      for (int y = cy - r; y <= cy + r; ++y)
        for (int x = cx - r; x <= cx + r; ++x)
          if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r)
            paint(img.pixels, img.label, y, x, col, cls);
    } else {  // elongated bar
      bool horiz = rng.uniform() < 0.5;
      int len = std::max(4, static_cast<int>(rng.uniform(0.35, 0.70) * (horiz ? w : h)));
      int thick = std::max(2, static_cast<int>(rng.uniform(0.04, 0.09) * h));
      for (int t = -thick / 2; t < (thick + 1) / 2; ++t)
        for (int l = -len / 2; l < (len + 1) / 2; ++l) {
          int y = horiz ? cy + t : cy + l;
          int x = horiz ? cx + l : cx + t;
          paint(img.pixels, img.label, y, x, col, cls);
        }
    }
  }

  if (sh.blur) detail::box3_blur(img.pixels);

  std::array<float, 3> gain, bias;
  for (int c = 0; c < 3; ++c) {
    gain[static_cast<std::size_t>(c)] = 1.0f + static_cast<float>(rng.uniform(-0.05, 0.05));
    bias[static_cast<std::size_t>(c)] =
        sh.bias[static_cast<std::size_t>(c)] + static_cast<float>(rng.uniform(-0.03, 0.03));
  }
  std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      float& p = img.pixels[static_cast<std::size_t>(c) * plane + i];
      p = p * gain[static_cast<std::size_t>(c)] + bias[static_cast<std::size_t>(c)] +
          static_cast<float>(rng.uniform(-sh.noise_amp, sh.noise_amp));
      p = std::clamp(p, -1.0f, 1.0f);
    }
  return img;
}

// Warm, noisy source vs cool, blurred, low-texture target.
inline constexpr DomainShading kSourceShading{{0.25f, -0.10f, -0.25f}, 0.12f, false};
inline constexpr DomainShading kTargetShading{{-0.20f, 0.20f, 0.15f}, 0.03f, true};
inline constexpr std::uint64_t kTargetStream = 0x8000000000000000ULL;

}  // namespace detail

inline std::vector<LabeledImage> gen_toy_source(const DomainSpec& spec, int count,
                                                std::uint64_t seed) {
  spec.validate();
  if (count < 1) throw ArgError("gen_toy_source: count must be >= 1");
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(i));
    out.push_back(detail::gen_toy_scene(spec, rng, detail::kSourceShading));
  }
  return out;
}

/// Target scenes with their internally generated labels; reserved for the
/// held-out eval split, never for training paths.
inline std::vector<LabeledImage> gen_toy_target_labeled(const DomainSpec& spec, int count,
                                                        std::uint64_t seed) {
  spec.validate();
  if (count < 1) throw ArgError("gen_toy_target: count must be >= 1");
  std::vector<LabeledImage> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, detail::kTargetStream + static_cast<std::uint64_t>(i));
    out.push_back(detail::gen_toy_scene(spec, rng, detail::kTargetShading));
  }
  return out;
}

inline std::vector<UnlabeledImage> gen_toy_target(const DomainSpec& spec, int count,
                                                  std::uint64_t seed) {
  auto labeled = gen_toy_target_labeled(spec, count, seed);
  std::vector<UnlabeledImage> out;
  out.reserve(labeled.size());
  for (auto& li : labeled) out.push_back(UnlabeledImage{std::move(li.pixels)});
  return out;
}

}  // namespace procst
