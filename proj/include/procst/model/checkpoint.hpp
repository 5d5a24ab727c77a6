#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "procst/model/multiscale.hpp"
#include "procst/nn/segmentor.hpp"

namespace procst {

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'O', 'C', 'S', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

struct NamedBlock {
  std::string name;
  Tensor<float> data;
};

// Little-endian container: magic, u32 version, u64 header length, JSON header
// (which carries the block name/offset/count manifest), then flat f32 blocks.
inline void write_block_file(const std::filesystem::path& path, nlohmann::json meta,
                             const std::vector<NamedBlock>& blocks) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& b : blocks) {
    manifest.push_back({{"name", b.name}, {"offset", offset}, {"count", b.data.numel()}});
    offset += b.data.numel() * sizeof(float);
  }
  meta["blocks"] = std::move(manifest);
  std::string header = meta.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write checkpoint: " + path.string());
  os.write(kCheckpointMagic, 8);
  std::uint32_t ver = kCheckpointVersion;
  os.write(reinterpret_cast<const char*>(&ver), 4);
  std::uint64_t hlen = header.size();
  os.write(reinterpret_cast<const char*>(&hlen), 8);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& b : blocks)
    os.write(reinterpret_cast<const char*>(b.data.data()),
             static_cast<std::streamsize>(b.data.numel() * sizeof(float)));
  if (!os) throw DataError("checkpoint write failed: " + path.string());
}

inline std::pair<nlohmann::json, std::vector<NamedBlock>> read_block_file(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IntegrityError("not a checkpoint file: " + path.string());
  std::uint32_t ver = 0;
  if (!is.read(reinterpret_cast<char*>(&ver), 4)) throw IntegrityError("truncated: " + path.string());
  if (ver != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(ver) + ", expected " +
                       std::to_string(kCheckpointVersion));
  std::uint64_t hlen = 0;
  if (!is.read(reinterpret_cast<char*>(&hlen), 8)) throw IntegrityError("truncated: " + path.string());
  std::string header(hlen, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(hlen)))
    throw IntegrityError("truncated header: " + path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("corrupt checkpoint header: " + std::string(e.what()));
  }
  std::vector<NamedBlock> blocks;
  for (const auto& rec : meta.at("blocks")) {
    NamedBlock b;
    b.name = rec.at("name").get<std::string>();
    auto count = rec.at("count").get<std::uint64_t>();
    b.data = Tensor<float>({static_cast<int>(count)});
    if (!is.read(reinterpret_cast<char*>(b.data.data()),
                 static_cast<std::streamsize>(count * sizeof(float))))
      throw IntegrityError("truncated block '" + b.name + "': " + path.string());
    blocks.push_back(std::move(b));
  }
  return {std::move(meta), std::move(blocks)};
}

template <typename T, typename Net>
inline void append_net_blocks(Net& net, std::vector<NamedBlock>& out) {
  net.visit("", [&](const std::string& name, Var<T>& v) {
    NamedBlock b;
    b.name = name;
    b.data = v->value.template cast<float>();
    out.push_back(std::move(b));
  });
}

template <typename T, typename Net>
inline void restore_net_blocks(Net& net, const std::vector<NamedBlock>& blocks, std::size_t& cursor,
                               const std::string& where) {
  net.visit("", [&](const std::string& name, Var<T>& v) {
    if (cursor >= blocks.size())
      throw IntegrityError(where + ": missing parameter block " + name);
    const auto& b = blocks[cursor++];
    if (b.name != name)
      throw IntegrityError(where + ": block order mismatch, got '" + b.name + "' expected '" +
                           name + "'");
    if (b.data.numel() != v->value.numel())
      throw IntegrityError(where + ": block '" + name + "' size mismatch");
    for (std::size_t i = 0; i < b.data.numel(); ++i) v->value[i] = static_cast<T>(b.data[i]);
  });
}

}  // namespace detail

template <typename T>
inline void save_checkpoint(MultiScaleModel<T>& model, const std::filesystem::path& path) {
  nlohmann::json meta = {
      {"kind", "procst-model"},
      {"format_version", kCheckpointVersion},
      {"scale_spec",
       {{"num_scales", model.spec.num_scales},
        {"scale_factor", model.spec.scale_factor},
        {"top_h", model.spec.top_h},
        {"top_w", model.spec.top_w}}},
      {"width", model.width},
      {"batch_per_device", model.batch_per_device},
      {"seed", model.seed},
      {"extractor_seed", model.extractor_seed},
      {"initialized_scales", model.num_initialized()},
      {"trainable", model.trainable},
      {"lambda",
       {{"adv", model.weights.adv},
        {"style", model.weights.style},
        {"cyclic", model.weights.cyclic},
        {"labels", model.weights.labels},
        {"content", model.weights.content},
        {"gram", model.weights.gram},
        {"tv", model.weights.tv},
        {"gp", model.weights.gp}}},
  };
  std::vector<detail::NamedBlock> blocks;
  for (int n = 1; n <= model.num_initialized(); ++n) {
    std::string prefix = "scale" + std::to_string(n);
    model.quad(n).visit(prefix, [&](const std::string& name, Var<T>& v) {
      blocks.push_back({name, v->value.template cast<float>()});
    });
    model.quad(n).visit_buffers(prefix, [&](const std::string& name, Tensor<T>& t) {
      blocks.push_back({name, t.template cast<float>()});
    });
  }
  detail::write_block_file(path, std::move(meta), blocks);
}

template <typename T>
inline MultiScaleModel<T> load_checkpoint(const std::filesystem::path& path) {
  auto [meta, blocks] = detail::read_block_file(path);
  if (meta.value("kind", "") != "procst-model")
    throw IntegrityError("not a model checkpoint: " + path.string());
  const auto& ss = meta.at("scale_spec");
  MultiScaleModel<T> model;
  model.spec = ScaleSpec::make(ss.at("num_scales").get<int>(), ss.at("scale_factor").get<double>(),
                               ss.at("top_h").get<int>(), ss.at("top_w").get<int>());
  model.width = meta.at("width").get<int>();
  model.batch_per_device = meta.at("batch_per_device").get<int>();
  model.seed = meta.at("seed").get<std::uint64_t>();
  model.extractor_seed = meta.at("extractor_seed").get<std::uint64_t>();
  const auto& lam = meta.at("lambda");
  model.weights.adv = lam.at("adv").get<double>();
  model.weights.style = lam.at("style").get<double>();
  model.weights.cyclic = lam.at("cyclic").get<double>();
  model.weights.labels = lam.at("labels").get<double>();
  model.weights.content = lam.at("content").get<double>();
  model.weights.gram = lam.at("gram").get<double>();
  model.weights.tv = lam.at("tv").get<double>();
  model.weights.gp = lam.at("gp").get<double>();
  int k = meta.at("initialized_scales").get<int>();
  std::size_t cursor = 0;
  for (int n = 1; n <= k; ++n) {
    model.append_scale();
    std::string prefix = "scale" + std::to_string(n);
    model.quad(n).visit(prefix, [&](const std::string& name, Var<T>& v) {
      if (cursor >= blocks.size()) throw IntegrityError("missing block " + name);
      const auto& b = blocks[cursor++];
      if (b.name != name) throw IntegrityError("block order mismatch at '" + b.name + "'");
      if (b.data.numel() != v->value.numel())
        throw IntegrityError("block '" + name + "' size mismatch");
      for (std::size_t i = 0; i < b.data.numel(); ++i) v->value[i] = static_cast<T>(b.data[i]);
    });
    model.quad(n).visit_buffers(prefix, [&](const std::string& name, Tensor<T>& t) {
      if (cursor >= blocks.size()) throw IntegrityError("missing block " + name);
      const auto& b = blocks[cursor++];
      if (b.name != name) throw IntegrityError("block order mismatch at '" + b.name + "'");
      if (b.data.numel() != t.numel()) throw IntegrityError("block '" + name + "' size mismatch");
      for (std::size_t i = 0; i < b.data.numel(); ++i) t[i] = static_cast<T>(b.data[i]);
    });
  }
  if (cursor != blocks.size()) throw IntegrityError("unexpected extra blocks in " + path.string());
  auto flags = meta.at("trainable").get<std::vector<int>>();
  for (int n = 1; n <= k; ++n)
    model.set_scale_trainable(n, flags[static_cast<std::size_t>(n - 1)] != 0);
  return model;
}

template <typename T>
inline void save_segmentor(SegmentorNet<T>& seg, const std::filesystem::path& path) {
  nlohmann::json meta = {{"kind", "procst-segmentor"},
                         {"format_version", kCheckpointVersion},
                         {"num_classes", seg.num_classes}};
  std::vector<detail::NamedBlock> blocks;
  detail::append_net_blocks<T>(seg, blocks);
  detail::write_block_file(path, std::move(meta), blocks);
}

template <typename T>
inline SegmentorNet<T> load_segmentor(const std::filesystem::path& path) {
  auto [meta, blocks] = detail::read_block_file(path);
  if (meta.value("kind", "") != "procst-segmentor")
    throw IntegrityError("not a segmentor checkpoint: " + path.string());
  Rng rng(0);
  SegmentorNet<T> seg(meta.at("num_classes").get<int>(), rng);
  std::size_t cursor = 0;
  detail::restore_net_blocks<T>(seg, blocks, cursor, path.string());
  if (cursor != blocks.size()) throw IntegrityError("unexpected extra blocks in " + path.string());
  return seg;
}

/// In-memory parameter bytes of one scale, for freeze checks.
template <typename T>
inline std::vector<float> scale_param_bytes(MultiScaleModel<T>& model, int n) {
  std::vector<float> out;
  model.quad(n).visit("", [&](const std::string&, Var<T>& v) {
    for (std::size_t i = 0; i < v->value.numel(); ++i)
      out.push_back(static_cast<float>(v->value[i]));
  });
  model.quad(n).visit_buffers("", [&](const std::string&, Tensor<T>& t) {
    for (std::size_t i = 0; i < t.numel(); ++i) out.push_back(static_cast<float>(t[i]));
  });
  return out;
}

template <typename T, typename Net>
inline std::vector<float> net_param_bytes(Net& net) {
  std::vector<float> out;
  net.visit("", [&](const std::string&, Var<T>& v) {
    for (std::size_t i = 0; i < v->value.numel(); ++i)
      out.push_back(static_cast<float>(v->value[i]));
  });
  return out;
}

}  // namespace procst
