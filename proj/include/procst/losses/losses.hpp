#pragma once

#include <functional>

#include "procst/core/ops.hpp"
#include "procst/losses/weights.hpp"
#include "procst/nn/feature_extractor.hpp"
#include "procst/nn/segmentor.hpp"

namespace procst {

/// G[a,b] = (1/(C*H*W)) sum_{i,j} F[a,i,j] F[b,i,j].
/// Accepts [C,H,W] -> [C,C] or batched [B,C,H,W] -> [B,C,C].
template <typename T>
inline Var<T> gram(const Var<T>& features) {
  bool batched = features->value.rank() == 4;
  if (!batched && features->value.rank() != 3)
    throw ArgError("gram: [C,H,W] or [B,C,H,W] required");
  int b = batched ? features->value.dim(0) : 1;
  int c = features->value.dim(batched ? 1 : 0);
  int h = features->value.dim(batched ? 2 : 1);
  int w = features->value.dim(batched ? 3 : 2);
  if (h * w < 1) throw ArgError("gram: empty feature map");
  auto f = reshape(features, {b, c, h * w});
  auto g = scale(bmm(f, permute(f, {0, 2, 1})), T(1) / (static_cast<T>(c) * h * w));
  return batched ? g : reshape(g, {c, c});
}

/// Mean of squared forward differences, both orientations pooled.
template <typename T>
inline Var<T> tv_loss(const Var<T>& img) {
  if (img->value.rank() != 4) throw ShapeError("tv_loss: [B,C,H,W] required");
  int b = img->value.dim(0), c = img->value.dim(1), h = img->value.dim(2), w = img->value.dim(3);
  if (h < 2 || w < 2) throw ShapeError("tv_loss: dims must be >= 2x2");
  auto dh = sub(crop2d(img, 0, 1, h, w - 1), crop2d(img, 0, 0, h, w - 1));
  auto dv = sub(crop2d(img, 1, 0, h - 1, w), crop2d(img, 0, 0, h - 1, w));
  double count = static_cast<double>(b) * c * (static_cast<double>(h) * (w - 1) + static_cast<double>(h - 1) * w);
  return scale(add(sum_all(square(dh)), sum_all(square(dv))), static_cast<T>(1.0 / count));
}

template <typename T>
struct StyleLossParts {
  Var<T> content, gram_term, tv, total;
};

/// Content keeps s_n's features, Gram matches t_n's per-stage statistics, TV
/// regularizes the translation itself.
template <typename T>
inline StyleLossParts<T> style_loss_parts(const Var<T>& s_n, const Var<T>& t_n, const Var<T>& st_n,
                                          const FeatureExtractor<T>& fx, const LossWeights& w) {
  check_same_shape(s_n->value, st_n->value, "style_loss");
  check_same_shape(t_n->value, st_n->value, "style_loss");
  auto gen_stages = fx.stages(st_n);
  auto content = mse(fx.content(s_n), gen_stages[FeatureExtractor<T>::kContentStage - 1]);
  auto style_stages = fx.stages(t_n);
  Var<T> gram_term;
  for (int l = 0; l < FeatureExtractor<T>::kStages; ++l) {
    auto d = mse(gram(style_stages[static_cast<std::size_t>(l)]),
                 gram(gen_stages[static_cast<std::size_t>(l)]));
    gram_term = l == 0 ? d : add(gram_term, d);
  }
  auto tv = tv_loss(st_n);
  auto total = add(add(scale(content, static_cast<T>(w.content)), scale(gram_term, static_cast<T>(w.gram))),
                   scale(tv, static_cast<T>(w.tv)));
  return {content, gram_term, tv, total};
}

template <typename T>
inline Var<T> style_loss(const Var<T>& s_n, const Var<T>& t_n, const Var<T>& st_n,
                         const FeatureExtractor<T>& fx, const LossWeights& w) {
  return style_loss_parts(s_n, t_n, st_n, fx, w).total;
}

template <typename T>
using CriticFn = std::function<Var<T>(const Var<T>&)>;

template <typename T>
inline Var<T> adv_loss_generator(const CriticFn<T>& d, const Var<T>& fake) {
  return neg(mean_all(d(fake)));
}

template <typename T>
struct CriticLossParts {
  Var<T> wasserstein, penalty, total;
};

/// WGAN-GP critic objective. `eps` holds one mixing coefficient per sample.
template <typename T>
inline CriticLossParts<T> adv_loss_critic_parts(const CriticFn<T>& d, const Var<T>& real,
                                                const Var<T>& fake, const Tensor<T>& eps,
                                                T lambda_gp) {
  check_same_shape(real->value, fake->value, "adv_loss_critic");
  int b = real->value.dim(0), c = real->value.dim(1), h = real->value.dim(2),
      w = real->value.dim(3);
  if (eps.numel() != static_cast<std::size_t>(b))
    throw ArgError("adv_loss_critic: need one epsilon per sample");

  auto wasserstein = sub(mean_all(d(fake)), mean_all(d(real)));

  auto mix = Tensor<T>::uninit({b, c, h, w});
  std::size_t plane = static_cast<std::size_t>(c) * h * w;
  for (int i = 0; i < b; ++i) {
    T e = eps[static_cast<std::size_t>(i)];
    if (e < T(0) || e > T(1)) throw ArgError("adv_loss_critic: epsilon outside [0,1]");
    for (std::size_t j = 0; j < plane; ++j) {
      std::size_t at = static_cast<std::size_t>(i) * plane + j;
      mix[at] = e * real->value[at] + (T(1) - e) * fake->value[at];
    }
  }
  auto x_hat = make_leaf<T>(std::move(mix));
  auto score = d(x_hat);
  int map_n = score->value.dim(1) * score->value.dim(2) * score->value.dim(3);
  auto per_sample = scale(sum_last(reshape(score, {b, map_n})), T(1) / static_cast<T>(map_n));
  auto gx = grad(sum_all(per_sample), {x_hat})[0];
  auto nsq = sum_last(square(reshape(gx, {b, c * h * w})));
  auto norm = sqrt_v(add_scalar(nsq, T(1e-12)));
  auto penalty = mean_all(square(add_scalar(norm, T(-1))));

  auto total = add(wasserstein, scale(penalty, lambda_gp));
  return {wasserstein, penalty, total};
}

template <typename T>
inline Var<T> adv_loss_critic(const CriticFn<T>& d, const Var<T>& real, const Var<T>& fake,
                              const Tensor<T>& eps, T lambda_gp) {
  return adv_loss_critic_parts(d, real, fake, eps, lambda_gp).total;
}

template <typename T>
inline Var<T> cyclic_loss(const Var<T>& x_n, const Var<T>& xcc_n) {
  check_same_shape(x_n->value, xcc_n->value, "cyclic_loss");
  return mean_abs(x_n, xcc_n);
}

/// lambda_adv (adv_st + adv_ts) + lambda_style (style_st + style_ts)
/// + lambda_cyclic (cyc_ss + cyc_tt)
template <typename T>
inline Var<T> cst_loss(const Var<T>& adv_st, const Var<T>& adv_ts, const Var<T>& style_st,
                       const Var<T>& style_ts, const Var<T>& cyc_ss, const Var<T>& cyc_tt,
                       const LossWeights& w) {
  auto adv = scale(add(adv_st, adv_ts), static_cast<T>(w.adv));
  auto style = scale(add(style_st, style_ts), static_cast<T>(w.style));
  auto cyc = scale(add(cyc_ss, cyc_tt), static_cast<T>(w.cyclic));
  return add(add(adv, style), cyc);
}

template <typename T>
inline Tensor<T> one_hot(const Tensor<std::uint8_t>& labels, int k) {
  if (labels.rank() != 3) throw ShapeError("one_hot: [B,H,W] required");
  int b = labels.dim(0), h = labels.dim(1), w = labels.dim(2);
  Tensor<T> m({b, k, h, w});
  for (int i = 0; i < b; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int cls = labels[(static_cast<std::size_t>(i) * h + y) * static_cast<std::size_t>(w) + x];
        if (cls >= k) throw DataError("one_hot: label " + std::to_string(cls) + " >= K");
        m.at(i, cls, y, x) = T(1);
      }
  return m;
}

/// The unreduced CE sum -sum m log p with a 1e-12 probability floor.
/// `clamp_flag`, when given, reports whether the floor fired on any labeled
/// entry (degenerate prediction).
template <typename T>
inline Var<T> cross_entropy(const Var<T>& p, const Tensor<std::uint8_t>& labels,
                            bool* clamp_flag = nullptr) {
  if (p->value.rank() != 4) throw ShapeError("cross_entropy: [B,K,H,W] probabilities required");
  int k = p->value.dim(1);
  auto m = one_hot<T>(labels, k);
  check_same_shape(p->value, m, "cross_entropy");
  if (clamp_flag) {
    *clamp_flag = false;
    for (std::size_t i = 0; i < m.numel(); ++i)
      if (m[i] > T(0) && p->value[i] <= T(1e-12)) *clamp_flag = true;
  }
  return neg(sum_all(mul(make_const<T>(std::move(m)), log_v(clamp_min(p, T(1e-12))))));
}

/// Per-pixel mean CE on logits, skipping `ignore_label` pixels; the
/// scale-invariant reduction used inside training steps.
template <typename T>
inline Var<T> ce_mean_logits(const Var<T>& logits, const Tensor<std::uint8_t>& labels,
                             std::uint8_t ignore_label = 255) {
  if (logits->value.rank() != 4) throw ShapeError("ce_mean_logits: [B,K,H,W] required");
  int b = logits->value.dim(0), k = logits->value.dim(1), h = logits->value.dim(2),
      w = logits->value.dim(3);
  if (labels.rank() != 3 || labels.dim(0) != b || labels.dim(1) != h || labels.dim(2) != w)
    throw ShapeError("ce_mean_logits: label shape mismatch");
  Tensor<T> m({b, k, h, w});
  std::size_t valid = 0;
  for (int i = 0; i < b; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        std::uint8_t cls =
            labels[(static_cast<std::size_t>(i) * h + y) * static_cast<std::size_t>(w) + x];
        if (cls == ignore_label) continue;
        if (cls >= k) throw DataError("ce_mean_logits: label " + std::to_string(cls) + " >= K");
        m.at(i, cls, y, x) = T(1);
        ++valid;
      }
  if (valid == 0) throw ArgError("ce_mean_logits: no labeled pixels");
  auto picked = mul(make_const<T>(std::move(m)), log_softmax_ch(logits));
  return scale(neg(sum_all(picked)), T(1) / static_cast<T>(valid));
}

/// L_CE,SiT: SiT segmentor on the translated image vs the source labels.
/// Gradients reach both the generator (through st_top) and seg_sit.
template <typename T>
inline Var<T> label_loss_sit(const Var<T>& st_top, const Tensor<std::uint8_t>& label_s,
                             SegmentorNet<T>& seg_sit) {
  return ce_mean_logits(seg_sit.logits(st_top), label_s);
}

/// L_CE,ss: frozen source segmentor on the cycle-reconstructed image.
template <typename T>
inline Var<T> label_loss_cyclic(const Var<T>& ss_top, const Tensor<std::uint8_t>& label_s,
                                SegmentorNet<T>& seg_s_frozen) {
  return ce_mean_logits(seg_s_frozen.logits(ss_top), label_s);
}

/// L_CST + lambda_labels (L_CE,SiT + L_CE,ss); only valid at the top scale.
template <typename T>
inline Var<T> last_scale_loss(const Var<T>& cst, const Var<T>& ce_sit, const Var<T>& ce_ss,
                              const LossWeights& w, int n, int num_scales) {
  if (n != num_scales)
    throw ArgError("last_scale_loss: scale " + std::to_string(n) + " is not the top scale");
  return add(cst, scale(add(ce_sit, ce_ss), static_cast<T>(w.labels)));
}

}  // namespace procst
