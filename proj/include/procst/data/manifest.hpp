#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "procst/core/error.hpp"
#include "procst/data/image.hpp"

namespace procst {

struct ManifestEntry {
  std::string image;
  std::string label;  // empty when absent
  std::string split;  // train | eval
};

/// Line-delimited JSON: a header record, then one record per entry with
/// fields {image, label?, split}. Paths are relative to the manifest file.
struct DatasetManifest {
  std::string domain_tag;  // source | target | sit | tis
  std::uint64_t seed = 0;
  DomainSpec spec;
  std::vector<ManifestEntry> entries;
  std::filesystem::path dir;  // location the relative paths resolve against

  std::filesystem::path image_path(std::size_t i) const { return dir / entries[i].image; }
  std::filesystem::path label_path(std::size_t i) const { return dir / entries[i].label; }
};

inline void validate_manifest(const DatasetManifest& m) {
  if (m.domain_tag != "source" && m.domain_tag != "target" && m.domain_tag != "sit" &&
      m.domain_tag != "tis")
    throw DataError("manifest: unknown domain tag '" + m.domain_tag + "'");
  for (const auto& e : m.entries) {
    if (e.split != "train" && e.split != "eval")
      throw DataError("manifest: unknown split '" + e.split + "'");
    bool labeled = !e.label.empty();
    if (m.domain_tag == "tis") {
      if (labeled) throw DataError("manifest: tis entry carries a label: " + e.image);
    } else if (m.domain_tag == "target") {
      // Target labels exist only in the held-out eval split.
      if (e.split == "train" && labeled)
        throw DataError("manifest: target train entry carries a label: " + e.image);
    } else if (!labeled) {
      throw DataError("manifest: " + m.domain_tag + " entry missing label: " + e.image);
    }
  }
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  validate_manifest(m);
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest: " + path.string());
  nlohmann::json head = {
      {"kind", "procst-manifest"},
      {"domain", m.domain_tag},
      {"seed", m.seed},
      {"spec",
       {{"height", m.spec.height},
        {"width", m.spec.width},
        {"channels", m.spec.channels},
        {"num_classes", m.spec.num_classes}}},
  };
  os << head.dump() << "\n";
  for (const auto& e : m.entries) {
    nlohmann::json rec = {{"image", e.image}, {"split", e.split}};
    if (!e.label.empty()) rec["label"] = e.label;
    os << rec.dump() << "\n";
  }
  if (!os) throw DataError("manifest write failed: " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty manifest: " + path.string());
  nlohmann::json head;
  try {
    head = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest header parse error in " + path.string() + ": " + e.what());
  }
  if (head.value("kind", "") != "procst-manifest")
    throw DataError("not a manifest: " + path.string());
  DatasetManifest m;
  m.domain_tag = head.at("domain").get<std::string>();
  m.seed = head.value("seed", std::uint64_t{0});
  const auto& sp = head.at("spec");
  m.spec.height = sp.at("height").get<int>();
  m.spec.width = sp.at("width").get<int>();
  m.spec.channels = sp.value("channels", 3);
  m.spec.num_classes = sp.at("num_classes").get<int>();
  m.dir = path.parent_path();
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("manifest parse error at " + path.string() + ":" + std::to_string(lineno) +
                      ": " + e.what());
    }
    ManifestEntry e;
    e.image = rec.at("image").get<std::string>();
    e.label = rec.value("label", "");
    e.split = rec.value("split", "train");
    m.entries.push_back(std::move(e));
  }
  validate_manifest(m);
  return m;
}

/// Entries of one split; `split` empty selects everything.
inline std::vector<std::size_t> split_indices(const DatasetManifest& m, const std::string& split) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (split.empty() || m.entries[i].split == split) idx.push_back(i);
  return idx;
}

}  // namespace procst
