#pragma once

#include <cmath>
#include <filesystem>
#include <vector>

#include "procst/core/sym_eig.hpp"
#include "procst/data/dataset_io.hpp"
#include "procst/model/multiscale.hpp"
#include "procst/nn/feature_extractor.hpp"

namespace procst {

/// Source-in-Target dataset: every source image is pushed through the full
/// S->T chain and paired with its ORIGINAL source label. Entry order and
/// splits are preserved.
namespace detail {

inline void check_translatable(const MultiScaleModel<float>& model, const DatasetManifest& data,
                               const char* what) {
  if (model.num_initialized() != model.spec.num_scales)
    throw StateError(std::string(what) + ": model has " +
                     std::to_string(model.num_initialized()) + " of " +
                     std::to_string(model.spec.num_scales) + " scales");
  if (data.spec.height != model.spec.top_h || data.spec.width != model.spec.top_w)
    throw ConfigError(std::string(what) + ": dataset " + std::to_string(data.spec.height) + "x" +
                      std::to_string(data.spec.width) + " vs model top " +
                      std::to_string(model.spec.top_h) + "x" + std::to_string(model.spec.top_w));
}

inline Tensor<float> translate_top(MultiScaleModel<float>& model, const std::filesystem::path& in,
                                   bool source_to_target) {
  auto img = read_rgb_png(in);
  Tensor<float> batch({1, 3, img.dim(1), img.dim(2)});
  std::copy(img.data(), img.data() + img.numel(), batch.data());
  auto levels = pyramid_batch(batch, model.spec);
  std::vector<Var<float>> pyr;
  pyr.reserve(levels.size());
  for (auto& t : levels) pyr.push_back(make_const<float>(std::move(t)));
  int n = model.spec.num_scales;
  auto top = source_to_target ? model.sit_chain(pyr, n).back()->value
                              : model.tis_chain(pyr, n).back()->value;
  Tensor<float> plane({3, top.dim(2), top.dim(3)});
  std::copy(top.data(), top.data() + top.numel(), plane.data());
  return plane;
}

}  // namespace detail

inline DatasetManifest build_sit_dataset(MultiScaleModel<float>& model, const DatasetManifest& src,
                                         const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  detail::check_translatable(model, src, "build_sit_dataset");
  for (std::size_t i = 0; i < src.entries.size(); ++i)
    if (src.entries[i].label.empty())
      throw DataError("build_sit_dataset: entry " + std::to_string(i) + " has no label");

  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "labels");
  DatasetManifest out;
  out.domain_tag = "sit";
  out.seed = src.seed;
  out.spec = src.spec;
  out.dir = out_dir;
  for (std::size_t i = 0; i < src.entries.size(); ++i) {
    auto plane = detail::translate_top(model, src.image_path(i), true);
    ManifestEntry e;
    e.image = "images/" + frame_name(i) + ".png";
    e.label = "labels/" + frame_name(i) + ".png";
    e.split = src.entries[i].split;
    write_rgb_png(out_dir / e.image, plane);
    fs::copy_file(src.label_path(i), out_dir / e.label, fs::copy_options::overwrite_existing);
    out.entries.push_back(std::move(e));
  }
  save_manifest(out, out_dir / "manifest.jsonl");
  return out;
}

inline Tensor<float> translate_png(MultiScaleModel<float>& model, const std::filesystem::path& in,
                                   bool source_to_target) {
  return detail::translate_top(model, in, source_to_target);
}

/// The symmetric direction: target images re-styled as source, no labels.
inline DatasetManifest build_tis_dataset(MultiScaleModel<float>& model, const DatasetManifest& tgt,
                                         const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  detail::check_translatable(model, tgt, "build_tis_dataset");

  fs::create_directories(out_dir / "images");
  DatasetManifest out;
  out.domain_tag = "tis";
  out.seed = tgt.seed;
  out.spec = tgt.spec;
  out.dir = out_dir;
  for (std::size_t i = 0; i < tgt.entries.size(); ++i) {
    auto plane = detail::translate_top(model, tgt.image_path(i), false);
    ManifestEntry e;
    e.image = "images/" + frame_name(i) + ".png";
    e.split = tgt.entries[i].split;
    write_rgb_png(out_dir / e.image, plane);
    out.entries.push_back(std::move(e));
  }
  save_manifest(out, out_dir / "manifest.jsonl");
  return out;
}

/// 32-dim image descriptor: channel means of the stage-2 feature map.
inline std::vector<double> image_descriptor(const FeatureExtractor<float>& fx,
                                            const Tensor<float>& img) {
  if (img.rank() != 3) throw ShapeError("image_descriptor: [3,H,W] required");
  Tensor<float> b({1, img.dim(0), img.dim(1), img.dim(2)});
  std::copy(img.data(), img.data() + img.numel(), b.data());
  auto f = fx.stages(make_const<float>(std::move(b)))[1]->value;
  int c = f.dim(1), h = f.dim(2), w = f.dim(3);
  std::vector<double> d(static_cast<std::size_t>(c));
  for (int j = 0; j < c; ++j) {
    double acc = 0;
    for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p)
      acc += f[static_cast<std::size_t>(j) * h * w + p];
    d[static_cast<std::size_t>(j)] = acc / (static_cast<double>(h) * w);
  }
  return d;
}

struct Moments {
  std::vector<double> mean;
  std::vector<double> cov;  // row-major dim*dim, population normalization
};

inline Moments descriptor_moments(const std::vector<std::vector<double>>& d) {
  if (d.empty()) throw ArgError("descriptor_moments: empty set");
  std::size_t dim = d[0].size();
  Moments m;
  m.mean.assign(dim, 0.0);
  m.cov.assign(dim * dim, 0.0);
  for (const auto& x : d) {
    if (x.size() != dim) throw ShapeError("descriptor_moments: ragged descriptors");
    for (std::size_t i = 0; i < dim; ++i) m.mean[i] += x[i];
  }
  for (std::size_t i = 0; i < dim; ++i) m.mean[i] /= static_cast<double>(d.size());
  for (const auto& x : d)
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        m.cov[i * dim + j] += (x[i] - m.mean[i]) * (x[j] - m.mean[j]);
  for (auto& v : m.cov) v /= static_cast<double>(d.size());
  return m;
}

/// Squared Fréchet distance between Gaussians fitted to two moment sets:
/// |mu_a - mu_b|^2 + tr(Ca + Cb - 2 (Ca Cb)^{1/2}), with eps*I added to both
/// covariances for numerical footing.
inline double frechet_from_moments(const Moments& a, const Moments& b, double eps = 1e-6) {
  std::size_t dim = a.mean.size();
  if (b.mean.size() != dim) throw ShapeError("frechet_from_moments: dimension mismatch");
  int n = static_cast<int>(dim);
  std::vector<double> ca = a.cov, cb = b.cov;
  for (std::size_t i = 0; i < dim; ++i) {
    ca[i * dim + i] += eps;
    cb[i * dim + i] += eps;
  }
  double d2 = 0;
  for (std::size_t i = 0; i < dim; ++i) {
    double diff = a.mean[i] - b.mean[i];
    d2 += diff * diff;
    d2 += ca[i * dim + i] + cb[i * dim + i];
  }
  // tr((Ca Cb)^{1/2}) computed on the symmetric similar form
  // sqrt(Ca)^T Cb sqrt(Ca), which shares its eigenvalues with Ca Cb.
  auto ra = sym_sqrt(ca, n);
  std::vector<double> tmp(dim * dim, 0.0), mid(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t k = 0; k < dim; ++k) {
      double r = ra[i * dim + k];
      if (r == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) tmp[i * dim + j] += r * cb[k * dim + j];
    }
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t k = 0; k < dim; ++k) {
      double t = tmp[i * dim + k];
      if (t == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) mid[i * dim + j] += t * ra[k * dim + j];
    }
  for (std::size_t i = 0; i < dim; ++i)  // force exact symmetry before Jacobi
    for (std::size_t j = i + 1; j < dim; ++j) {
      double s = 0.5 * (mid[i * dim + j] + mid[j * dim + i]);
      mid[i * dim + j] = mid[j * dim + i] = s;
    }
  double tr_sqrt = 0;
  for (double ev : sym_eigenvalues(mid, n)) tr_sqrt += std::sqrt(std::max(0.0, ev));
  return std::max(0.0, d2 - 2.0 * tr_sqrt);
}

inline double frechet_gap(const std::vector<std::vector<double>>& da,
                          const std::vector<std::vector<double>>& db, double eps = 1e-6) {
  return frechet_from_moments(descriptor_moments(da), descriptor_moments(db), eps);
}

/// Feature-space domain gap between two image sets.
inline double domain_gap(const FeatureExtractor<float>& fx, const std::vector<Tensor<float>>& a,
                         const std::vector<Tensor<float>>& b, double eps = 1e-6) {
  if (a.empty() || b.empty()) throw ArgError("domain_gap: empty image set");
  std::vector<std::vector<double>> da, db;
  da.reserve(a.size());
  db.reserve(b.size());
  for (const auto& img : a) da.push_back(image_descriptor(fx, img));
  for (const auto& img : b) db.push_back(image_descriptor(fx, img));
  return frechet_gap(da, db, eps);
}

}  // namespace procst
