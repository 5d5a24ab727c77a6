#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "procst/sit/sit_builder.hpp"
#include "procst/train/trainer.hpp"

namespace procst {

struct UdaConfig {
  TrainConfig train;
  int rounds = 3;
  double tau = 0.9;

  void validate() const {
    train.validate();
    if (rounds < 0) throw ConfigError("uda: rounds must be >= 0");
    if (tau < 0 || tau > 1) throw ConfigError("uda: tau must lie in [0,1]");
  }
};

/// Global-confusion mIoU of a segmentor over labeled images.
template <typename T>
inline IoUReport evaluate_miou(SegmentorNet<T>& seg, const std::vector<LabeledImage>& data,
                               int num_classes) {
  if (data.empty()) throw ArgError("evaluate_miou: empty dataset");
  ConfusionAccumulator acc(num_classes);
  for (const auto& img : data) {
    Tensor<T> b({1, 3, img.pixels.dim(1), img.pixels.dim(2)});
    std::copy(img.pixels.data(), img.pixels.data() + img.pixels.numel(), b.data());
    auto pred = argmax_labels(seg.segment(make_const<T>(std::move(b)))->value);
    Tensor<std::uint8_t> gt({1, img.label.dim(0), img.label.dim(1)});
    std::copy(img.label.data(), img.label.data() + img.label.numel(), gt.data());
    acc.add(pred, gt);
  }
  return acc.report();
}

/// The supervised baseline: identical training path regardless of whether
/// the manifest is the original source or the SiT drop-in.
template <typename T>
inline SegmentorNet<T> train_segmenter_supervised(const std::vector<LabeledImage>& data,
                                                  int num_classes, const UdaConfig& cfg,
                                                  SegPretrainStats* stats = nullptr) {
  return pretrain_source_segmentor<T>(data, num_classes, cfg.train, stats);
}

template <typename T>
struct SelfTrainResult {
  SegmentorNet<T> seg;
  std::vector<double> coverage;  // per round: kept / total target pixels
  std::vector<bool> round_skipped;
};

namespace detail {

template <typename T>
inline void continue_segmentor(SegmentorNet<T>& seg, const std::vector<LabeledImage>& data,
                               const TrainConfig& cfg, Rng& rng) {
  auto params = collect_params<T>(seg);
  Sgd<T> opt(cfg.lr_semseg);
  for (int step = 1; step <= cfg.seg_steps; ++step) {
    auto b = sample_source(data, rng, cfg.seg_batch, 0, 0);
    auto loss = ce_mean_logits(seg.logits(make_const<T>(widen<T>(b.pixels))), b.labels);
    check_finite(scalar_value(loss), "self-train loss", step, cfg.max_loss_abs);
    auto grads = grad(loss, params);
    opt.step(params, grads);
  }
}

}  // namespace detail

/// Minimal confidence-thresholded self-training: warm start supervised,
/// then each round pseudo-labels target-train pixels whose max probability
/// reaches tau (others ignored in the CE) and continues training on the
/// union. Rounds with zero coverage are logged and skipped.
template <typename T>
inline SelfTrainResult<T> self_train_uda(const std::vector<LabeledImage>& labeled,
                                         const std::vector<UnlabeledImage>& target_train,
                                         int num_classes, const UdaConfig& cfg,
                                         const SegmentorNet<T>* warm_start = nullptr,
                                         std::ostream* log = nullptr) {
  cfg.validate();
  if (target_train.empty()) throw ArgError("self_train_uda: empty target set");
  SelfTrainResult<T> res;
  if (warm_start)
    res.seg = cloned<T>(*warm_start);
  else
    res.seg = train_segmenter_supervised<T>(labeled, num_classes, cfg);
  set_trainable<T>(res.seg, true);

  for (int round = 1; round <= cfg.rounds; ++round) {
    std::vector<LabeledImage> pseudo;
    std::size_t kept = 0, total = 0;
    for (const auto& img : target_train) {
      int h = img.pixels.dim(1), w = img.pixels.dim(2);
      Tensor<T> b({1, 3, h, w});
      std::copy(img.pixels.data(), img.pixels.data() + img.pixels.numel(), b.data());
      auto probs = res.seg.segment(make_const<T>(std::move(b)))->value;
      LabeledImage pl;
      pl.pixels = img.pixels;
      pl.label = Tensor<std::uint8_t>({h, w}, kIgnoreLabel);
      std::size_t img_kept = 0;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          int best = 0;
          T best_p = probs.at(0, 0, y, x);
          for (int c = 1; c < num_classes; ++c)
            if (probs.at(0, c, y, x) > best_p) {
              best_p = probs.at(0, c, y, x);
              best = c;
            }
          ++total;
          if (static_cast<double>(best_p) >= cfg.tau) {
            pl.label[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint8_t>(best);
            ++img_kept;
          }
        }
      kept += img_kept;
      if (img_kept > 0) pseudo.push_back(std::move(pl));
    }
    double cov = total ? static_cast<double>(kept) / static_cast<double>(total) : 0.0;
    res.coverage.push_back(cov);
    if (kept == 0) {
      res.round_skipped.push_back(true);
      if (log) *log << "round " << round << ": zero pseudo-label coverage, skipped\n";
      continue;
    }
    res.round_skipped.push_back(false);
    if (log) *log << "round " << round << ": coverage " << cov << "\n";
    std::vector<LabeledImage> unioned = labeled;
    for (auto& p : pseudo) unioned.push_back(std::move(p));
    Rng rng = Rng::derive(cfg.train.seed, 0x0da0000ULL + static_cast<std::uint64_t>(round));
    detail::continue_segmentor(res.seg, unioned, cfg.train, rng);
  }
  return res;
}

struct UdaCell {
  std::string input;   // source | sit
  std::string method;  // supervised | self_train
  std::uint64_t seed = 0;
  bool diverged = false;
  IoUReport report;
  std::vector<double> coverage;
};

struct UdaComparison {
  int num_classes = 0;
  std::vector<UdaCell> cells;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<double> comparison_mious(const UdaComparison& cmp, const std::string& input,
                                            const std::string& method) {
  std::vector<double> out;
  for (const auto& c : cmp.cells)
    if (c.input == input && c.method == method && !c.diverged) out.push_back(c.report.miou);
  return out;
}

/// Split firewall: the evaluation manifest must not share any image file
/// with the training manifest.
inline void check_split_firewall(const DatasetManifest& train, const DatasetManifest& eval) {
  namespace fs = std::filesystem;
  auto canon = [](const fs::path& p) { return fs::weakly_canonical(p).string(); };
  std::vector<std::string> a;
  for (std::size_t i = 0; i < train.entries.size(); ++i) a.push_back(canon(train.image_path(i)));
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < eval.entries.size(); ++i) {
    auto p = canon(eval.image_path(i));
    if (std::binary_search(a.begin(), a.end(), p))
      throw DataError("split firewall: evaluation image also in training set: " + p);
  }
}

/// Table-1-shaped comparison: for every seed and input dataset, train the
/// supervised baseline and the self-training loop, then score on the target
/// eval split. Divergent sub-runs are recorded and the rest still emitted.
template <typename T>
inline UdaComparison compare_uda(const DatasetManifest& source, const DatasetManifest& sit,
                                 const DatasetManifest& target_train,
                                 const DatasetManifest& target_eval, const UdaConfig& cfg,
                                 const std::vector<std::uint64_t>& seeds) {
  cfg.validate();
  if (seeds.empty()) throw ArgError("compare_uda: need at least one seed");
  check_split_firewall(target_train, target_eval);

  auto load_labeled = [](const DatasetManifest& m, const std::string& split) {
    std::vector<LabeledImage> out;
    for (std::size_t i : split_indices(m, split)) {
      auto e = load_entry(m, i);
      if (e.label.numel() == 0)
        throw DataError("compare_uda: entry " + std::to_string(i) + " in " + m.domain_tag +
                        " lacks a label");
      out.push_back(std::move(e));
    }
    if (out.empty()) throw DataError("compare_uda: no '" + split + "' entries in " + m.domain_tag);
    return out;
  };
  auto src_data = load_labeled(source, "train");
  auto sit_data = load_labeled(sit, "train");
  std::vector<UnlabeledImage> tgt_train;
  for (std::size_t i : split_indices(target_train, "train"))
    tgt_train.push_back(UnlabeledImage{read_rgb_png(target_train.image_path(i))});
  if (tgt_train.empty()) throw DataError("compare_uda: no target train entries");
  auto eval_data = load_labeled(target_eval, "eval");
  int k = source.spec.num_classes;

  UdaComparison cmp;
  cmp.num_classes = k;
  struct Input {
    const char* tag;
    const std::vector<LabeledImage>* data;
  };
  for (const auto& in : {Input{"source", &src_data}, Input{"sit", &sit_data}}) {
    for (std::uint64_t seed : seeds) {
      UdaConfig run = cfg;
      run.train.seed = seed;
      UdaCell sup{in.tag, "supervised", seed, false, {}, {}};
      SegmentorNet<T> sup_seg;
      bool have_sup = false;
      try {
        sup_seg = train_segmenter_supervised<T>(*in.data, k, run);
        sup.report = evaluate_miou(sup_seg, eval_data, k);
        have_sup = true;
      } catch (const DivergenceError&) {
        sup.diverged = true;
      }
      cmp.cells.push_back(sup);

      UdaCell st{in.tag, "self_train", seed, false, {}, {}};
      try {
        auto res =
            self_train_uda<T>(*in.data, tgt_train, k, run, have_sup ? &sup_seg : nullptr);
        st.report = evaluate_miou(res.seg, eval_data, k);
        st.coverage = res.coverage;
      } catch (const DivergenceError&) {
        st.diverged = true;
      }
      cmp.cells.push_back(st);
    }
  }
  return cmp;
}

inline void write_uda_csv(const std::filesystem::path& path, const UdaComparison& cmp) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "input,method,seed,diverged";
  for (int c = 0; c < cmp.num_classes; ++c) os << ",iou_class" << c;
  os << ",miou\n";
  for (const auto& cell : cmp.cells) {
    os << cell.input << "," << cell.method << "," << cell.seed << ","
       << (cell.diverged ? "yes" : "no");
    if (cell.diverged) {
      for (int c = 0; c < cmp.num_classes; ++c) os << ",";
      os << ",\n";
      continue;
    }
    for (int c = 0; c < cmp.num_classes; ++c) {
      os << ",";
      if (cell.report.present[static_cast<std::size_t>(c)])
        os << cell.report.iou[static_cast<std::size_t>(c)];
      else
        os << "absent";
    }
    os << "," << cell.report.miou << "\n";
  }
  for (const char* input : {"source", "sit"})
    for (const char* method : {"supervised", "self_train"}) {
      auto v = comparison_mious(cmp, input, method);
      os << input << "," << method << ",median," << (v.empty() ? "yes" : "no");
      for (int c = 0; c < cmp.num_classes; ++c) os << ",";
      os << ",";
      if (!v.empty()) os << median_of(v);
      os << "\n";
    }
}

inline std::vector<Tensor<float>> load_images(const DatasetManifest& m, const std::string& split,
                                              std::size_t cap = 0) {
  std::vector<Tensor<float>> out;
  for (std::size_t i : split_indices(m, split)) {
    out.push_back(read_rgb_png(m.image_path(i)));
    if (cap && out.size() == cap) break;
  }
  if (out.empty()) throw DataError("no '" + split + "' images in " + m.domain_tag + " manifest");
  return out;
}

/// Pairwise feature-space gaps over named image sets, written as a symmetric
/// labeled matrix.
inline void write_gap_csv(const std::filesystem::path& path, FeatureExtractor<float>& fx,
                          const std::vector<std::string>& names,
                          const std::vector<std::vector<Tensor<float>>>& sets) {
  if (names.size() != sets.size() || names.empty()) throw ArgError("gap csv: names/sets mismatch");
  std::size_t n = names.size();
  std::vector<Moments> mom;
  mom.reserve(n);
  for (const auto& s : sets) {
    std::vector<std::vector<double>> ds;
    ds.reserve(s.size());
    for (const auto& img : s) ds.push_back(image_descriptor(fx, img));
    mom.push_back(descriptor_moments(ds));
  }
  std::vector<std::vector<double>> g(n, std::vector<double>(n, 0.0));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a; b < n; ++b) g[a][b] = g[b][a] = frechet_from_moments(mom[a], mom[b]);
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "domain";
  for (const auto& nm : names) os << "," << nm;
  os << "\n";
  for (std::size_t a = 0; a < n; ++a) {
    os << names[a];
    for (std::size_t b = 0; b < n; ++b) os << "," << g[a][b];
    os << "\n";
  }
}

/// Tiles one row per sample, one column per named image set, into a single
/// PNG (white separators).
inline void write_comparison_grid(const std::filesystem::path& path,
                                  const std::vector<std::vector<Tensor<float>>>& columns) {
  if (columns.empty() || columns[0].empty()) throw ArgError("grid: no images");
  std::size_t rows = columns[0].size();
  int h = columns[0][0].dim(1), w = columns[0][0].dim(2);
  for (const auto& col : columns) {
    if (col.size() != rows) throw ShapeError("grid: ragged columns");
    for (const auto& img : col)
      if (img.dim(0) != 3 || img.dim(1) != h || img.dim(2) != w)
        throw ShapeError("grid: mixed image sizes");
  }
  const int pad = 2;
  int gh = static_cast<int>(rows) * (h + pad) - pad;
  int gw = static_cast<int>(columns.size()) * (w + pad) - pad;
  Tensor<float> grid({3, gh, gw}, 1.0f);
  for (std::size_t ci = 0; ci < columns.size(); ++ci)
    for (std::size_t ri = 0; ri < rows; ++ri) {
      int y0 = static_cast<int>(ri) * (h + pad), x0 = static_cast<int>(ci) * (w + pad);
      const auto& img = columns[ci][ri];
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            grid[(static_cast<std::size_t>(c) * gh + y0 + y) * static_cast<std::size_t>(gw) + x0 +
                 x] = img[(static_cast<std::size_t>(c) * h + y) * static_cast<std::size_t>(w) + x];
    }
  write_rgb_png(path, grid);
}

}  // namespace procst
