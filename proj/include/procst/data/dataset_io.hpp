#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "procst/data/manifest.hpp"
#include "procst/data/png_io.hpp"
#include "procst/data/toygen.hpp"

namespace procst {

inline std::string frame_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", i);
  return buf;
}

namespace detail {

inline DatasetManifest materialize_core(
    const std::filesystem::path& dir, const std::string& domain_tag, const DomainSpec& spec,
    std::uint64_t seed, std::size_t count,
    const std::function<const Tensor<float>&(std::size_t)>& pixels,
    const std::function<const Tensor<std::uint8_t>*(std::size_t)>& label,
    const std::function<std::string(std::size_t)>& split) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "labels");
  DatasetManifest m;
  m.domain_tag = domain_tag;
  m.seed = seed;
  m.spec = spec;
  m.dir = dir;
  for (std::size_t i = 0; i < count; ++i) {
    ManifestEntry e;
    e.image = "images/" + frame_name(i) + ".png";
    e.split = split(i);
    write_rgb_png(dir / e.image, pixels(i));
    if (const auto* lab = label(i)) {
      e.label = "labels/" + frame_name(i) + ".png";
      write_gray_png(dir / e.label, *lab);
    }
    m.entries.push_back(std::move(e));
  }
  save_manifest(m, dir / "manifest.jsonl");
  return m;
}

}  // namespace detail

inline DatasetManifest materialize_labeled(const std::filesystem::path& dir,
                                           const std::string& domain_tag, const DomainSpec& spec,
                                           std::uint64_t seed,
                                           const std::vector<LabeledImage>& images,
                                           const std::function<std::string(std::size_t)>& split) {
  return detail::materialize_core(
      dir, domain_tag, spec, seed, images.size(),
      [&](std::size_t i) -> const Tensor<float>& { return images[i].pixels; },
      [&](std::size_t i) -> const Tensor<std::uint8_t>* { return &images[i].label; }, split);
}

inline DatasetManifest materialize_unlabeled(const std::filesystem::path& dir,
                                             const std::string& domain_tag, const DomainSpec& spec,
                                             std::uint64_t seed,
                                             const std::vector<UnlabeledImage>& images,
                                             const std::function<std::string(std::size_t)>& split) {
  return detail::materialize_core(
      dir, domain_tag, spec, seed, images.size(),
      [&](std::size_t i) -> const Tensor<float>& { return images[i].pixels; },
      [&](std::size_t) -> const Tensor<std::uint8_t>* { return nullptr; }, split);
}

/// Loads entry i; the label tensor is empty when the entry has none.
inline LabeledImage load_entry(const DatasetManifest& m, std::size_t i) {
  if (i >= m.entries.size()) throw ArgError("load_entry: index out of range");
  LabeledImage out;
  out.pixels = read_rgb_png(m.image_path(i));
  if (!m.entries[i].label.empty()) out.label = read_gray_png(m.label_path(i));
  return out;
}

}  // namespace procst
