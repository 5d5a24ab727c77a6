#pragma once

#include "procst/nn/layers.hpp"

namespace procst {

inline int depth_for_scale(int n) { return n == 1 ? 5 : 7; }

/// Per-scale translation generator. Scale 1 maps an image directly; higher
/// scales take [image_n, upsampled previous output] and emit a residual that
/// is added to the upsampled previous output before the tanh range squash.
template <typename T>
struct GeneratorNet {
  int scale_n = 1;
  int width = 64;
  NormMode norm = NormMode::group;
  ConvStack<T> stack;

  GeneratorNet() = default;
  GeneratorNet(int n, int width_, NormMode norm_, Rng& rng)
      : scale_n(n),
        width(width_),
        norm(norm_),
        stack(n == 1 ? 3 : 6, width_, 3, depth_for_scale(n), 1, norm_, rng) {}

  /// Base case: no previous output.
  Var<T> forward_base(const Var<T>& img, bool training) {
    if (scale_n != 1) throw StateError("generator: base forward is for scale 1 only");
    return tanh_v(stack.forward(img, training));
  }

  /// img_n and up_prev share dims [B,3,H_n,W_n].
  Var<T> forward_step(const Var<T>& img_n, const Var<T>& up_prev, bool training) {
    if (scale_n == 1) throw StateError("generator: scale 1 has no previous input");
    check_same_shape(img_n->value, up_prev->value, "generator step");
    auto residual = stack.forward(concat_ch(img_n, up_prev), training);
    return tanh_v(add(residual, up_prev));
  }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    stack.visit(prefix, fn);
  }
};

/// Fully-convolutional critic; unpadded convs, one linear score per patch.
template <typename T>
struct DiscriminatorNet {
  int scale_n = 1;
  int width = 64;
  NormMode norm = NormMode::group;
  ConvStack<T> stack;

  DiscriminatorNet() = default;
  DiscriminatorNet(int n, int width_, NormMode norm_, Rng& rng)
      : scale_n(n), width(width_), norm(norm_), stack(3, width_, 1, depth_for_scale(n), 0, norm_, rng) {}

  Var<T> forward(const Var<T>& img, bool training) { return stack.forward(img, training); }

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    stack.visit(prefix, fn);
  }
};

template <typename T>
inline Var<T> discriminate(DiscriminatorNet<T>& d, const Var<T>& img, bool training = false) {
  return d.forward(img, training);
}

}  // namespace procst
