#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "procst/data/dataset_io.hpp"
#include "procst/eval/miou.hpp"
#include "procst/losses/losses.hpp"
#include "procst/model/checkpoint.hpp"
#include "procst/model/multiscale.hpp"
#include "procst/nn/feature_extractor.hpp"
#include "procst/nn/segmentor.hpp"
#include "procst/train/optim.hpp"
#include "procst/version.hpp"

namespace procst {

enum class Ablation { full, no_label, single_scale, no_style, no_cyclic };

inline const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_label: return "no_label";
    case Ablation::single_scale: return "single_scale";
    case Ablation::no_style: return "no_style";
    case Ablation::no_cyclic: return "no_cyclic";
  }
  return "full";
}

inline Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::full, Ablation::no_label, Ablation::single_scale,
                     Ablation::no_style, Ablation::no_cyclic})
    if (s == ablation_name(a)) return a;
  throw ArgError("unknown ablation variant '" + s + "'");
}

struct AblationConfig {
  Ablation variant = Ablation::full;
};

struct TrainConfig {
  ScaleSpec spec = ScaleSpec::make(3, 0.5, 64, 128);
  int width = 64;
  int iterations_per_scale = 2000;
  int iterations_last_scale = 3000;
  int batch_size = 8;
  double lr_g = 1e-4;  // Adam, betas (0.5, 0.999)
  double lr_d = 1e-4;
  double lr_semseg = 1e-4;  // plain SGD
  int critic_steps_per_gen = 1;
  std::uint64_t seed = 1;
  LossWeights weights;
  int checkpoint_every = 1000;
  double max_loss_abs = 1e9;
  int seg_steps = 500;
  int seg_batch = 8;
  int crop_h = 0, crop_w = 0;  // optional random-crop pipeline, off by default

  void validate() const {
    if (iterations_per_scale < 1 || iterations_last_scale < 1 || batch_size < 1 ||
        critic_steps_per_gen < 1 || checkpoint_every < 1 || seg_steps < 1 || seg_batch < 1)
      throw ConfigError("train config: all counts must be >= 1");
    if (lr_g <= 0 || lr_d <= 0 || lr_semseg <= 0)
      throw ConfigError("train config: learning rates must be positive");
    if (spec.per_scale_dims.size() != static_cast<std::size_t>(spec.num_scales))
      throw ConfigError("train config: scale spec not materialized (use ScaleSpec::make)");
    weights.validate();
  }
};

inline TrainConfig apply_ablation(TrainConfig cfg, const AblationConfig& a) {
  switch (a.variant) {
    case Ablation::full: break;
    case Ablation::no_label: cfg.weights.labels = 0; break;
    case Ablation::single_scale:
      cfg.spec = ScaleSpec::make(1, cfg.spec.scale_factor, cfg.spec.top_h, cfg.spec.top_w);
      break;
    case Ablation::no_style: cfg.weights.style = 0; break;
    case Ablation::no_cyclic: cfg.weights.cyclic = 0; break;
  }
  return cfg;
}

inline nlohmann::json train_config_json(const TrainConfig& cfg) {
  return {{"num_scales", cfg.spec.num_scales},
          {"scale_factor", cfg.spec.scale_factor},
          {"top_h", cfg.spec.top_h},
          {"top_w", cfg.spec.top_w},
          {"width", cfg.width},
          {"iterations_per_scale", cfg.iterations_per_scale},
          {"iterations_last_scale", cfg.iterations_last_scale},
          {"batch_size", cfg.batch_size},
          {"lr_g", cfg.lr_g},
          {"lr_d", cfg.lr_d},
          {"lr_semseg", cfg.lr_semseg},
          {"critic_steps_per_gen", cfg.critic_steps_per_gen},
          {"seed", cfg.seed},
          {"checkpoint_every", cfg.checkpoint_every},
          {"max_loss_abs", cfg.max_loss_abs},
          {"seg_steps", cfg.seg_steps},
          {"seg_batch", cfg.seg_batch},
          {"crop_h", cfg.crop_h},
          {"crop_w", cfg.crop_w},
          {"weights",
           {{"adv", cfg.weights.adv},
            {"style", cfg.weights.style},
            {"cyclic", cfg.weights.cyclic},
            {"labels", cfg.weights.labels},
            {"content", cfg.weights.content},
            {"gram", cfg.weights.gram},
            {"tv", cfg.weights.tv},
            {"gp", cfg.weights.gp}}}};
}

/// Keys present in `j` override `base`; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  auto take = [&](const nlohmann::json& src, const char* key, auto& dst) {
    if (src.contains(key)) dst = src.at(key).get<std::decay_t<decltype(dst)>>();
  };
  static const std::set<std::string> known = {
      "num_scales", "scale_factor",    "top_h",        "top_w",     "width",
      "iterations_per_scale",          "iterations_last_scale",     "batch_size",
      "lr_g",       "lr_d",            "lr_semseg",    "critic_steps_per_gen",
      "seed",       "checkpoint_every", "max_loss_abs", "seg_steps", "seg_batch",
      "crop_h",     "crop_w",          "weights"};
  static const std::set<std::string> known_w = {"adv",     "style", "cyclic", "labels",
                                                "content", "gram",  "tv",     "gp"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("train config: unknown key '" + it.key() + "'");
  int num_scales = base.spec.num_scales;
  double scale_factor = base.spec.scale_factor;
  int top_h = base.spec.top_h, top_w = base.spec.top_w;
  take(j, "num_scales", num_scales);
  take(j, "scale_factor", scale_factor);
  take(j, "top_h", top_h);
  take(j, "top_w", top_w);
  base.spec = ScaleSpec::make(num_scales, scale_factor, top_h, top_w);
  take(j, "width", base.width);
  take(j, "iterations_per_scale", base.iterations_per_scale);
  take(j, "iterations_last_scale", base.iterations_last_scale);
  take(j, "batch_size", base.batch_size);
  take(j, "lr_g", base.lr_g);
  take(j, "lr_d", base.lr_d);
  take(j, "lr_semseg", base.lr_semseg);
  take(j, "critic_steps_per_gen", base.critic_steps_per_gen);
  take(j, "seed", base.seed);
  take(j, "checkpoint_every", base.checkpoint_every);
  take(j, "max_loss_abs", base.max_loss_abs);
  take(j, "seg_steps", base.seg_steps);
  take(j, "seg_batch", base.seg_batch);
  take(j, "crop_h", base.crop_h);
  take(j, "crop_w", base.crop_w);
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    for (auto it = w.begin(); it != w.end(); ++it)
      if (!known_w.count(it.key()))
        throw ConfigError("train config: unknown weight '" + it.key() + "'");
    take(w, "adv", base.weights.adv);
    take(w, "style", base.weights.style);
    take(w, "cyclic", base.weights.cyclic);
    take(w, "labels", base.weights.labels);
    take(w, "content", base.weights.content);
    take(w, "gram", base.weights.gram);
    take(w, "tv", base.weights.tv);
    take(w, "gp", base.weights.gp);
  }
  return base;
}

namespace detail {

template <typename T>
inline Tensor<T> widen(const Tensor<float>& src) {
  Tensor<T> out(src.shape());
  std::copy(src.data(), src.data() + src.numel(), out.data());
  return out;
}

struct SourceBatch {
  Tensor<float> pixels;
  Tensor<std::uint8_t> labels;
};

inline void crop_offsets(Rng& rng, int h, int w, int ch, int cw, int& y0, int& x0) {
  if (ch > h || cw > w) throw ConfigError("crop larger than image");
  y0 = ch == h ? 0 : static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(h - ch + 1)));
  x0 = cw == w ? 0 : static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(w - cw + 1)));
}

inline SourceBatch sample_source(const std::vector<LabeledImage>& data, Rng& rng, int bs, int ch,
                                 int cw) {
  int h = data[0].pixels.dim(1), w = data[0].pixels.dim(2);
  int oh = ch > 0 ? ch : h, ow = cw > 0 ? cw : w;
  SourceBatch b{Tensor<float>({bs, 3, oh, ow}), Tensor<std::uint8_t>({bs, oh, ow})};
  for (int i = 0; i < bs; ++i) {
    const auto& img = data[rng.uniform_int(data.size())];
    int y0 = 0, x0 = 0;
    if (ch > 0) crop_offsets(rng, h, w, oh, ow, y0, x0);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          b.pixels.at(i, c, y, x) =
              img.pixels[(static_cast<std::size_t>(c) * h + y0 + y) * static_cast<std::size_t>(w) +
                         x0 + x];
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x)
        b.labels[(static_cast<std::size_t>(i) * oh + y) * static_cast<std::size_t>(ow) + x] =
            img.label[(static_cast<std::size_t>(y0 + y)) * static_cast<std::size_t>(w) + x0 + x];
  }
  return b;
}

inline Tensor<float> sample_target(const std::vector<UnlabeledImage>& data, Rng& rng, int bs,
                                   int ch, int cw) {
  int h = data[0].pixels.dim(1), w = data[0].pixels.dim(2);
  int oh = ch > 0 ? ch : h, ow = cw > 0 ? cw : w;
  Tensor<float> b({bs, 3, oh, ow});
  for (int i = 0; i < bs; ++i) {
    const auto& img = data[rng.uniform_int(data.size())];
    int y0 = 0, x0 = 0;
    if (ch > 0) crop_offsets(rng, h, w, oh, ow, y0, x0);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
          b.at(i, c, y, x) =
              img.pixels[(static_cast<std::size_t>(c) * h + y0 + y) * static_cast<std::size_t>(w) +
                         x0 + x];
  }
  return b;
}

template <typename T>
inline std::vector<Var<T>> as_consts(std::vector<Tensor<T>> levels) {
  std::vector<Var<T>> out;
  out.reserve(levels.size());
  for (auto& t : levels) out.push_back(make_const<T>(std::move(t)));
  return out;
}

inline void check_finite(double v, const char* what, int step, double cap) {
  if (!std::isfinite(v) || std::abs(v) > cap)
    throw DivergenceError(std::string(what) + " diverged at step " + std::to_string(step),
                          step - 1);
}

}  // namespace detail

struct ScaleTrainStats {
  int scale = 0;
  int steps = 0;
  bool label_columns = false;
  std::vector<double> gen_total;
  std::vector<double> critic_total;
};

/// One progressive stage: appends scale n (which must be the next
/// uninitialized one), trains its quadruple with alternating
/// critic/generator updates, and at the top scale also trains seg_sit
/// through the label losses while seg_s stays frozen.
template <typename T>
inline ScaleTrainStats train_scale(MultiScaleModel<T>& model, int n,
                                   const std::vector<LabeledImage>& source,
                                   const std::vector<UnlabeledImage>& target,
                                   const FeatureExtractor<T>& fx, SegmentorNet<T>* seg_s,
                                   SegmentorNet<T>* seg_sit, const TrainConfig& cfg,
                                   std::ostream* csv,
                                   const std::filesystem::path* ckpt_dir = nullptr) {
  cfg.validate();
  if (source.empty() || target.empty()) throw ArgError("train_scale: empty dataset");
  if (n < 1 || n > model.spec.num_scales)
    throw StateError("train_scale: scale " + std::to_string(n) + " out of range");
  if (model.num_initialized() != n - 1)
    throw StateError("train_scale: scale " + std::to_string(n) + " requested with " +
                     std::to_string(model.num_initialized()) +
                     " scales trained; scales must be trained in order");
  int top = model.spec.num_scales;
  bool labels_on = n == top && cfg.weights.labels > 0;
  if (labels_on && (!seg_s || !seg_sit))
    throw StateError("train_scale: top scale with label loss needs both segmentors");

  model.append_scale();
  model.train_only(n);
  auto& q = model.quad(n);

  std::vector<Var<T>> gen_params = collect_params<T>(q.g_st);
  for (auto& p : collect_params<T>(q.g_ts)) gen_params.push_back(p);
  std::vector<Var<T>> critic_params = collect_params<T>(q.d_st);
  for (auto& p : collect_params<T>(q.d_ts)) critic_params.push_back(p);
  std::vector<Var<T>> seg_params;
  if (labels_on) seg_params = collect_params<T>(*seg_sit);

  Adam<T> opt_g(cfg.lr_g), opt_d(cfg.lr_d);
  Sgd<T> opt_seg(cfg.lr_semseg);
  Rng rng = Rng::derive(cfg.seed, 0xb000 + static_cast<std::uint64_t>(n));

  ScaleTrainStats stats;
  stats.scale = n;
  stats.label_columns = labels_on;
  int steps = n == top ? cfg.iterations_last_scale : cfg.iterations_per_scale;

  if (csv) {
    *csv << "step,scale,critic_total,wass_st,gp_st,wass_ts,gp_ts,grad_norm_d,lr_d,"
            "gen_total,adv_st,adv_ts,style_st,style_ts,cyc_ss,cyc_tt,grad_norm_g,lr_g";
    if (labels_on) *csv << ",ce_sit,ce_ss";
    *csv << "\n";
  }

  auto d_st_fn = [&](const Var<T>& x) { return q.d_st.forward(x, true); };
  auto d_ts_fn = [&](const Var<T>& x) { return q.d_ts.forward(x, true); };

  for (int step = 1; step <= steps; ++step) {
    double critic_total = 0, wass_st = 0, gp_st = 0, wass_ts = 0, gp_ts = 0, gnorm_d = 0;
    for (int it = 0; it < cfg.critic_steps_per_gen; ++it) {
      auto sb = detail::sample_source(source, rng, cfg.batch_size, cfg.crop_h, cfg.crop_w);
      auto tb = detail::sample_target(target, rng, cfg.batch_size, cfg.crop_h, cfg.crop_w);
      auto s_pyr = detail::as_consts(pyramid_batch(detail::widen<T>(sb.pixels), model.spec));
      auto t_pyr = detail::as_consts(pyramid_batch(detail::widen<T>(tb), model.spec));
      auto fake_t = detach(model.sit_chain(s_pyr, n).back());
      auto fake_s = detach(model.tis_chain(t_pyr, n).back());
      Tensor<T> eps_st({cfg.batch_size}), eps_ts({cfg.batch_size});
      for (int i = 0; i < cfg.batch_size; ++i) {
        eps_st[static_cast<std::size_t>(i)] = static_cast<T>(rng.uniform());
        eps_ts[static_cast<std::size_t>(i)] = static_cast<T>(rng.uniform());
      }
      auto st = adv_loss_critic_parts<T>(d_st_fn, t_pyr[static_cast<std::size_t>(n - 1)], fake_t,
                                         eps_st, static_cast<T>(cfg.weights.gp));
      auto ts = adv_loss_critic_parts<T>(d_ts_fn, s_pyr[static_cast<std::size_t>(n - 1)], fake_s,
                                         eps_ts, static_cast<T>(cfg.weights.gp));
      auto total = add(st.total, ts.total);
      critic_total = scalar_value(total);
      wass_st = scalar_value(st.wasserstein);
      gp_st = scalar_value(st.penalty);
      wass_ts = scalar_value(ts.wasserstein);
      gp_ts = scalar_value(ts.penalty);
      detail::check_finite(critic_total, "critic loss", step, cfg.max_loss_abs);
      auto grads = grad(total, critic_params);
      gnorm_d = grad_norm(grads);
      opt_d.step(critic_params, grads);
    }

    auto sb = detail::sample_source(source, rng, cfg.batch_size, cfg.crop_h, cfg.crop_w);
    auto tb = detail::sample_target(target, rng, cfg.batch_size, cfg.crop_h, cfg.crop_w);
    auto s_pyr = detail::as_consts(pyramid_batch(detail::widen<T>(sb.pixels), model.spec));
    auto t_pyr = detail::as_consts(pyramid_batch(detail::widen<T>(tb), model.spec));
    auto [st_fwd, s_back] = model.cycle_source(s_pyr, n);
    auto [ts_fwd, t_back] = model.cycle_target(t_pyr, n);
    const auto& s_n = s_pyr[static_cast<std::size_t>(n - 1)];
    const auto& t_n = t_pyr[static_cast<std::size_t>(n - 1)];

    auto adv_st = adv_loss_generator<T>(d_st_fn, st_fwd.back());
    auto adv_ts = adv_loss_generator<T>(d_ts_fn, ts_fwd.back());
    auto style_st = style_loss<T>(s_n, t_n, st_fwd.back(), fx, cfg.weights);
    auto style_ts = style_loss<T>(t_n, s_n, ts_fwd.back(), fx, cfg.weights);
    auto cyc_ss = cyclic_loss<T>(s_n, s_back.back());
    auto cyc_tt = cyclic_loss<T>(t_n, t_back.back());
    auto cst = cst_loss<T>(adv_st, adv_ts, style_st, style_ts, cyc_ss, cyc_tt, cfg.weights);

    Var<T> total = cst;
    double ce_sit_v = 0, ce_ss_v = 0;
    if (labels_on) {
      auto ce_sit = label_loss_sit<T>(st_fwd.back(), sb.labels, *seg_sit);
      auto ce_ss = label_loss_cyclic<T>(s_back.back(), sb.labels, *seg_s);
      total = last_scale_loss<T>(cst, ce_sit, ce_ss, cfg.weights, n, top);
      ce_sit_v = scalar_value(ce_sit);
      ce_ss_v = scalar_value(ce_ss);
    }
    double gen_total = scalar_value(total);
    detail::check_finite(gen_total, "generator loss", step, cfg.max_loss_abs);

    std::vector<Var<T>> wrt = gen_params;
    for (auto& p : seg_params) wrt.push_back(p);
    auto grads = grad(total, wrt);
    std::vector<Var<T>> gen_grads(grads.begin(),
                                  grads.begin() + static_cast<std::ptrdiff_t>(gen_params.size()));
    double gnorm_g = grad_norm(grads);
    opt_g.step(gen_params, gen_grads);
    if (labels_on) {
      std::vector<Var<T>> seg_grads(
          grads.begin() + static_cast<std::ptrdiff_t>(gen_params.size()), grads.end());
      opt_seg.step(seg_params, seg_grads);
    }

    stats.critic_total.push_back(critic_total);
    stats.gen_total.push_back(gen_total);
    if (csv) {
      *csv << step << "," << n << "," << critic_total << "," << wass_st << "," << gp_st << ","
           << wass_ts << "," << gp_ts << "," << gnorm_d << "," << cfg.lr_d << "," << gen_total
           << "," << scalar_value(adv_st) << "," << scalar_value(adv_ts) << ","
           << scalar_value(style_st) << "," << scalar_value(style_ts) << ","
           << scalar_value(cyc_ss) << "," << scalar_value(cyc_tt) << "," << gnorm_g << ","
           << cfg.lr_g;
      if (labels_on) *csv << "," << ce_sit_v << "," << ce_ss_v;
      *csv << "\n";
    }
    if (ckpt_dir && step % cfg.checkpoint_every == 0)
      save_checkpoint(model, *ckpt_dir / "checkpoint_latest.ckpt");
  }
  stats.steps = steps;
  return stats;
}

struct SegPretrainStats {
  std::vector<double> loss;
  double final_train_miou = 0;
};

/// Plain-SGD mean-CE training of the compact segmentor on labeled images.
template <typename T>
inline SegmentorNet<T> pretrain_source_segmentor(const std::vector<LabeledImage>& data,
                                                 int num_classes, const TrainConfig& cfg,
                                                 SegPretrainStats* stats = nullptr) {
  cfg.validate();
  if (data.empty()) throw ArgError("pretrain_source_segmentor: empty dataset");
  Rng init = Rng::derive(cfg.seed, 0x5e6);
  SegmentorNet<T> seg(num_classes, init);
  auto params = collect_params<T>(seg);
  Sgd<T> opt(cfg.lr_semseg);
  Rng rng = Rng::derive(cfg.seed, 0x5e6ba7c4);
  for (int step = 1; step <= cfg.seg_steps; ++step) {
    auto b = detail::sample_source(data, rng, cfg.seg_batch, 0, 0);
    auto loss = ce_mean_logits(seg.logits(make_const<T>(detail::widen<T>(b.pixels))), b.labels);
    double v = scalar_value(loss);
    detail::check_finite(v, "segmentor loss", step, cfg.max_loss_abs);
    if (stats) stats->loss.push_back(v);
    auto grads = grad(loss, params);
    opt.step(params, grads);
  }
  if (stats) {
    ConfusionAccumulator acc(num_classes);
    for (const auto& img : data) {
      Tensor<T> b({1, 3, img.pixels.dim(1), img.pixels.dim(2)});
      std::copy(img.pixels.data(), img.pixels.data() + img.pixels.numel(), b.data());
      auto pred = argmax_labels(seg.segment(make_const<T>(std::move(b)))->value);
      Tensor<std::uint8_t> gt({1, img.label.dim(0), img.label.dim(1)});
      std::copy(img.label.data(), img.label.data() + img.label.numel(), gt.data());
      acc.add(pred, gt);
    }
    stats->final_train_miou = acc.report().miou;
  }
  return seg;
}

template <typename T>
struct ProgressiveResult {
  MultiScaleModel<T> model;
  SegmentorNet<T> seg_s, seg_sit;
  bool has_segmentors = false;
  std::vector<ScaleTrainStats> per_scale;
};

/// Full progressive run: scales 1..N in order, per-scale CSV logs, a
/// checkpoint after every scale, and a run manifest tying the artifacts to
/// the config. seg_s is pretrained internally when label losses are active
/// and none was supplied.
template <typename T>
inline ProgressiveResult<T> train_progressive(const std::vector<LabeledImage>& source,
                                              const std::vector<UnlabeledImage>& target,
                                              int num_classes, const TrainConfig& cfg,
                                              const std::filesystem::path& out_dir,
                                              const SegmentorNet<T>* seg_s_in = nullptr,
                                              const std::string& ablation_tag = "full",
                                              const std::string& source_ref = "",
                                              const std::string& target_ref = "") {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out_dir);

  ProgressiveResult<T> res;
  res.model.spec = cfg.spec;
  res.model.width = cfg.width;
  res.model.batch_per_device = cfg.batch_size;
  res.model.seed = cfg.seed;
  res.model.extractor_seed = kDefaultExtractorSeed;
  res.model.weights = cfg.weights;
  FeatureExtractor<T> fx(res.model.extractor_seed);

  if (cfg.weights.labels > 0) {
    if (seg_s_in)
      res.seg_s = cloned<T>(*seg_s_in);
    else
      res.seg_s = pretrain_source_segmentor<T>(source, num_classes, cfg);
    set_trainable<T>(res.seg_s, false);
    res.seg_sit = cloned<T>(res.seg_s);
    set_trainable<T>(res.seg_sit, true);
    res.has_segmentors = true;
  }

  nlohmann::json scales_json = nlohmann::json::array();
  for (int n = 1; n <= cfg.spec.num_scales; ++n) {
    std::ofstream csv(out_dir / ("train_scale" + std::to_string(n) + ".csv"));
    auto stats = train_scale<T>(res.model, n, source, target, fx,
                                res.has_segmentors ? &res.seg_s : nullptr,
                                res.has_segmentors ? &res.seg_sit : nullptr, cfg, &csv, &out_dir);
    save_checkpoint(res.model, out_dir / ("checkpoint_scale" + std::to_string(n) + ".ckpt"));
    scales_json.push_back({{"scale", n},
                           {"steps", stats.steps},
                           {"final_gen_total", stats.gen_total.back()},
                           {"final_critic_total", stats.critic_total.back()}});
    res.per_scale.push_back(std::move(stats));
  }
  save_checkpoint(res.model, out_dir / "checkpoint_final.ckpt");
  if (res.has_segmentors) {
    save_segmentor(res.seg_s, out_dir / "seg_source.ckpt");
    save_segmentor(res.seg_sit, out_dir / "seg_sit.ckpt");
  }

  nlohmann::json manifest = {
      {"kind", "procst-run"},
      {"version", kVersionString},
      {"code_hash", version_hash()},
      {"ablation", ablation_tag},
      {"seed", cfg.seed},
      {"num_classes", num_classes},
      {"source_manifest", source_ref},
      {"target_manifest", target_ref},
      {"config", train_config_json(cfg)},
      {"scales", scales_json}};
  std::ofstream rm(out_dir / "run_manifest.json");
  rm << manifest.dump(2) << "\n";
  return res;
}

}  // namespace procst
