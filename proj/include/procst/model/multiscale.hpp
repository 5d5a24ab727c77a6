#pragma once

#include <vector>

#include "procst/data/image.hpp"
#include "procst/data/resize.hpp"
#include "procst/losses/weights.hpp"
#include "procst/nn/generator.hpp"

namespace procst {

inline NormMode pick_norm(int batch_per_device) {
  return batch_per_device > 16 ? NormMode::batch : NormMode::group;
}

template <typename T>
struct ScaleQuad {
  GeneratorNet<T> g_st, g_ts;
  DiscriminatorNet<T> d_st, d_ts;

  template <typename F>
  void visit(const std::string& prefix, F&& fn) {
    g_st.visit(prefix + ".g_st", fn);
    g_ts.visit(prefix + ".g_ts", fn);
    d_st.visit(prefix + ".d_st", fn);
    d_ts.visit(prefix + ".d_ts", fn);
  }

  template <typename F>
  void visit_buffers(const std::string& prefix, F&& fn) {
    auto each = [&](const std::string& tag, auto& net) {
      for (std::size_t i = 0; i < net.stack.norms.size(); ++i) {
        auto& nl = net.stack.norms[i];
        fn(prefix + tag + ".norm" + std::to_string(i) + ".running_mean", nl.running_mean);
        fn(prefix + tag + ".norm" + std::to_string(i) + ".running_var", nl.running_var);
      }
    };
    each(".g_st", g_st);
    each(".g_ts", g_ts);
    each(".d_st", d_st);
    each(".d_ts", d_ts);
  }
};

template <typename T>
inline ScaleQuad<T> init_scale(const ScaleSpec& spec, int n, int batch_per_device, int width,
                               std::uint64_t seed) {
  if (n < 1 || n > spec.num_scales)
    throw ArgError("init_scale: scale " + std::to_string(n) + " out of range");
  NormMode norm = pick_norm(batch_per_device);
  ScaleQuad<T> q;
  auto stream = [n](std::uint64_t k) { return static_cast<std::uint64_t>(n) * 16 + k; };
  Rng r0 = Rng::derive(seed, stream(0));
  q.g_st = GeneratorNet<T>(n, width, norm, r0);
  Rng r1 = Rng::derive(seed, stream(1));
  q.g_ts = GeneratorNet<T>(n, width, norm, r1);
  Rng r2 = Rng::derive(seed, stream(2));
  q.d_st = DiscriminatorNet<T>(n, width, norm, r2);
  Rng r3 = Rng::derive(seed, stream(3));
  q.d_ts = DiscriminatorNet<T>(n, width, norm, r3);
  return q;
}

/// The scale pyramid of generators/discriminators plus per-scale trainable
/// flags. Scales are appended as progressive training reaches them.
template <typename T>
struct MultiScaleModel {
  ScaleSpec spec;
  int width = 64;
  int batch_per_device = 8;
  std::uint64_t seed = 0;
  std::uint64_t extractor_seed = 0;
  LossWeights weights;
  std::vector<ScaleQuad<T>> scales;
  std::vector<char> trainable;

  int num_initialized() const { return static_cast<int>(scales.size()); }

  ScaleQuad<T>& quad(int n) {
    if (n < 1 || n > num_initialized())
      throw StateError("scale " + std::to_string(n) + " not initialized");
    return scales[static_cast<std::size_t>(n - 1)];
  }

  void append_scale() {
    int n = num_initialized() + 1;
    if (n > spec.num_scales) throw StateError("all scales already initialized");
    scales.push_back(init_scale<T>(spec, n, batch_per_device, width, seed));
    trainable.push_back(0);
    set_scale_trainable(n, false);
  }

  void set_scale_trainable(int n, bool on) {
    auto& q = quad(n);
    q.visit("", [on](const std::string&, Var<T>& v) { v->requires_grad = on; });
    trainable[static_cast<std::size_t>(n - 1)] = on ? 1 : 0;
  }

  /// Exactly one trainable scale during progressive training.
  void train_only(int n) {
    for (int k = 1; k <= num_initialized(); ++k) set_scale_trainable(k, k == n);
  }

  bool scale_training(int n) const { return trainable[static_cast<std::size_t>(n - 1)] != 0; }

  /// t̃_1..t̃_upto from the per-scale source images. Index k-1 holds t̃_k.
  std::vector<Var<T>> sit_chain(const std::vector<Var<T>>& s_pyr, int upto) {
    return chain(s_pyr, upto, /*st=*/true);
  }

  std::vector<Var<T>> tis_chain(const std::vector<Var<T>>& t_pyr, int upto) {
    return chain(t_pyr, upto, /*st=*/false);
  }

  /// Forward translation then the reverse chain fed with the INTERMEDIATE
  /// forward outputs; returns (forward outputs, reverse outputs).
  std::pair<std::vector<Var<T>>, std::vector<Var<T>>> cycle_source(
      const std::vector<Var<T>>& s_pyr, int upto) {
    auto fwd = sit_chain(s_pyr, upto);
    return {fwd, chain(fwd, upto, /*st=*/false)};
  }

  std::pair<std::vector<Var<T>>, std::vector<Var<T>>> cycle_target(
      const std::vector<Var<T>>& t_pyr, int upto) {
    auto fwd = tis_chain(t_pyr, upto);
    return {fwd, chain(fwd, upto, /*st=*/true)};
  }

 private:
  std::vector<Var<T>> chain(const std::vector<Var<T>>& pyr, int upto, bool st) {
    if (upto < 1 || upto > num_initialized())
      throw StateError("chain: scale " + std::to_string(upto) + " not available");
    if (static_cast<int>(pyr.size()) < upto) throw ShapeError("chain: pyramid too short");
    std::vector<Var<T>> out;
    out.reserve(static_cast<std::size_t>(upto));
    for (int k = 1; k <= upto; ++k) {
      auto& g = st ? quad(k).g_st : quad(k).g_ts;
      const auto& img = pyr[static_cast<std::size_t>(k - 1)];
      auto [h, w] = scale_dims(k, spec);
      if (img->value.dim(2) != h || img->value.dim(3) != w)
        throw ShapeError("chain: scale " + std::to_string(k) + " input " +
                         img->value.shape_str() + " expected " + std::to_string(h) + "x" +
                         std::to_string(w));
      bool training = scale_training(k);
      if (k == 1) {
        out.push_back(g.forward_base(img, training));
      } else {
        auto up = upsample_bilinear(out.back(), h, w);
        out.push_back(g.forward_step(img, up, training));
      }
    }
    return out;
  }
};

/// Batched per-scale pyramid: [B,3,H,W] -> one [B,3,H_n,W_n] tensor per scale.
template <typename T>
inline std::vector<Tensor<T>> pyramid_batch(const Tensor<T>& batch, const ScaleSpec& spec) {
  if (batch.rank() != 4) throw ShapeError("pyramid_batch: [B,3,H,W] required");
  int b = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (h != spec.top_h || w != spec.top_w) throw ShapeError("pyramid_batch: top dims mismatch");
  std::vector<Tensor<T>> out;
  for (int n = 1; n <= spec.num_scales; ++n) {
    auto [h2, w2] = scale_dims(n, spec);
    auto level = Tensor<T>::uninit({b, c, h2, w2});
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < c; ++j)
        area_resize_plane(batch.data() + (static_cast<std::size_t>(i) * c + j) * h * w, h, w,
                          level.data() + (static_cast<std::size_t>(i) * c + j) * h2 * w2, h2, w2);
    out.push_back(std::move(level));
  }
  return out;
}

}  // namespace procst
