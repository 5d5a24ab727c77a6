#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "procst/core/error.hpp"
#include "procst/core/tensor.hpp"

namespace procst {

inline constexpr std::uint8_t kIgnoreLabel = 255;

struct IoUReport {
  int num_classes = 0;
  std::vector<std::uint64_t> confusion;  // [gt * K + pred]
  std::vector<double> iou;               // NaN where the union is empty
  std::vector<bool> present;             // union > 0
  double miou = 0;
};

/// Global confusion matrix summed over every (pred, gt) pair fed in; the
/// report is derived from the summed counts, never averaged per image.
struct ConfusionAccumulator {
  int k = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionAccumulator(int num_classes) : k(num_classes) {
    if (num_classes < 2) throw ConfigError("ConfusionAccumulator: need at least 2 classes");
    counts.assign(static_cast<std::size_t>(k) * k, 0);
  }

  /// pred and gt: [H,W] or [B,H,W]. gt pixels equal to 255 are skipped.
  void add(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt) {
    if (pred.shape() != gt.shape()) throw ShapeError("ConfusionAccumulator: shape mismatch");
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      std::uint8_t g = gt[i];
      if (g == kIgnoreLabel) continue;
      std::uint8_t p = pred[i];
      if (g >= k) throw DataError("ConfusionAccumulator: gt label " + std::to_string(g) + " >= K");
      if (p >= k)
        throw DataError("ConfusionAccumulator: pred label " + std::to_string(p) + " >= K");
      ++counts[static_cast<std::size_t>(g) * k + p];
    }
  }

  void merge(const ConfusionAccumulator& other) {
    if (other.k != k) throw ConfigError("ConfusionAccumulator: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  }

  IoUReport report() const {
    IoUReport r;
    r.num_classes = k;
    r.confusion = counts;
    r.iou.assign(static_cast<std::size_t>(k), std::nan(""));
    r.present.assign(static_cast<std::size_t>(k), false);
    double sum = 0;
    int n = 0;
    for (int c = 0; c < k; ++c) {
      std::uint64_t tp = counts[static_cast<std::size_t>(c) * k + c];
      std::uint64_t fp = 0, fn = 0;
      for (int o = 0; o < k; ++o) {
        if (o == c) continue;
        fp += counts[static_cast<std::size_t>(o) * k + c];
        fn += counts[static_cast<std::size_t>(c) * k + o];
      }
      std::uint64_t uni = tp + fp + fn;
      if (uni == 0) continue;  // class absent everywhere: excluded from the mean
      r.present[static_cast<std::size_t>(c)] = true;
      r.iou[static_cast<std::size_t>(c)] = static_cast<double>(tp) / static_cast<double>(uni);
      sum += r.iou[static_cast<std::size_t>(c)];
      ++n;
    }
    if (n == 0) throw DataError("ConfusionAccumulator: no labeled pixels seen");
    r.miou = sum / n;
    return r;
  }
};

inline void write_iou_csv(const std::filesystem::path& path, const IoUReport& r) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << "class,tp,fp,fn,iou\n";
  for (int c = 0; c < r.num_classes; ++c) {
    std::uint64_t tp = r.confusion[static_cast<std::size_t>(c) * r.num_classes + c];
    std::uint64_t fp = 0, fn = 0;
    for (int o = 0; o < r.num_classes; ++o) {
      if (o == c) continue;
      fp += r.confusion[static_cast<std::size_t>(o) * r.num_classes + c];
      fn += r.confusion[static_cast<std::size_t>(c) * r.num_classes + o];
    }
    os << c << "," << tp << "," << fp << "," << fn << ",";
    if (r.present[static_cast<std::size_t>(c)])
      os << r.iou[static_cast<std::size_t>(c)];
    else
      os << "absent";
    os << "\n";
  }
  os << "miou,,,," << r.miou << "\n";
}

}  // namespace procst
