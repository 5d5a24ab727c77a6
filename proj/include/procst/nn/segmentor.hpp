#pragma once

#include "procst/nn/layers.hpp"

namespace procst {

/// Compact encoder-decoder: three stride-2 down blocks (16/32/64), three
/// bilinear-up blocks with skip connections, 1x1 head to K logits.
template <typename T>
struct SegmentorNet {
  int num_classes = 5;
  Conv2dLayer<T> enc1, enc2, enc3;
  Conv2dLayer<T> dec3, dec2, dec1;
  Conv2dLayer<T> head;
  T slope = T(0.2);

  SegmentorNet() = default;
  SegmentorNet(int k, Rng& rng)
      : num_classes(k),
        enc1(3, 16, 3, 2, 1, rng),
        enc2(16, 32, 3, 2, 1, rng),
        enc3(32, 64, 3, 2, 1, rng),
        dec3(64 + 32, 32, 3, 1, 1, rng),
        dec2(32 + 16, 16, 3, 1, 1, rng),
        dec1(16 + 3, 16, 3, 1, 1, rng),
        head(16, k, 1, 1, 0, rng) {}

  Var<T> logits(const Var<T>& img) {
    auto act = [&](const Var<T>& v) { return leaky_relu(v, slope); };
    auto e1 = act(enc1.forward(img));
    auto e2 = act(enc2.forward(e1));
    auto e3 = act(enc3.forward(e2));
    auto up = [&](const Var<T>& v, const Var<T>& ref) {
      return upsample_bilinear(v, ref->value.dim(2), ref->value.dim(3));
    };
    auto d3 = act(dec3.forward(concat_ch(up(e3, e2), e2)));
    auto d2 = act(dec2.forward(concat_ch(up(d3, e1), e1)));
    auto d1 = act(dec1.forward(concat_ch(up(d2, img), img)));
    return head.forward(d1);
  }

  /// Per-pixel class probabilities [B,K,H,W].
  Var<T> segment(const Var<T>& img) { return softmax_ch(logits(img)); }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    enc1.visit(prefix + ".enc1", fn);
    enc2.visit(prefix + ".enc2", fn);
    enc3.visit(prefix + ".enc3", fn);
    dec3.visit(prefix + ".dec3", fn);
    dec2.visit(prefix + ".dec2", fn);
    dec1.visit(prefix + ".dec1", fn);
    head.visit(prefix + ".head", fn);
  }
};

/// Hard label map [B,H,W] from probabilities or logits [B,K,H,W].
template <typename T>
inline Tensor<std::uint8_t> argmax_labels(const Tensor<T>& probs) {
  int b = probs.dim(0), k = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
  Tensor<std::uint8_t> out({b, h, w});
  for (int i = 0; i < b; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int best = 0;
        T bv = probs.at(i, 0, y, x);
        for (int c = 1; c < k; ++c)
          if (probs.at(i, c, y, x) > bv) {
            bv = probs.at(i, c, y, x);
            best = c;
          }
        out[(static_cast<std::size_t>(i) * h + y) * static_cast<std::size_t>(w) + x] =
            static_cast<std::uint8_t>(best);
      }
  return out;
}

}  // namespace procst
