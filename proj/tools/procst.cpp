#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "procst/data/toygen.hpp"
#include "procst/uda/uda.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;
using nlohmann::json;
using namespace procst;

namespace {

json read_json_file(const fs::path& path, const char* what) {
  std::ifstream is(path);
  if (!is) throw ConfigError(std::string(what) + ": cannot open " + path.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
  return j;
}

void write_run_manifest(const fs::path& out_dir, const std::string& kind, json params) {
  fs::create_directories(out_dir);
  json m = {{"kind", kind},
            {"version", kVersionString},
            {"code_hash", version_hash()},
            {"params", std::move(params)}};
  std::ofstream os(out_dir / "run_manifest.json");
  os << m.dump(2) << "\n";
}

DomainSpec domain_spec_from_json(const json& j) {
  DomainSpec sp;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "height" && it.key() != "width" && it.key() != "num_classes")
      throw ConfigError("domain spec: unknown key '" + it.key() + "'");
  sp.height = j.value("height", sp.height);
  sp.width = j.value("width", sp.width);
  sp.num_classes = j.value("num_classes", sp.num_classes);
  sp.validate();
  return sp;
}

struct RunSetup {
  TrainConfig train;
  UdaConfig uda;
  std::string source_manifest, target_manifest, target_eval_manifest;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  int num_classes = 0;  // 0 = take from source manifest
};

RunSetup setup_from_file(const fs::path& path) {
  auto j = read_json_file(path, "config");
  static const std::set<std::string> known = {
      "source_manifest", "target_manifest", "target_eval_manifest", "num_classes",
      "train",           "uda",             "seeds"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("config: unknown key '" + it.key() + "'");
  RunSetup s;
  s.train = train_config_from_json(j.value("train", json::object()));
  s.uda.train = s.train;
  if (j.contains("uda")) {
    const auto& u = j.at("uda");
    for (auto it = u.begin(); it != u.end(); ++it)
      if (it.key() != "rounds" && it.key() != "tau")
        throw ConfigError("config: unknown uda key '" + it.key() + "'");
    s.uda.rounds = u.value("rounds", s.uda.rounds);
    s.uda.tau = u.value("tau", s.uda.tau);
  }
  s.source_manifest = j.value("source_manifest", "");
  s.target_manifest = j.value("target_manifest", "");
  s.target_eval_manifest = j.value("target_eval_manifest", "");
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  s.num_classes = j.value("num_classes", 0);
  return s;
}

std::vector<LabeledImage> load_labeled_split(const DatasetManifest& m, const std::string& split) {
  std::vector<LabeledImage> out;
  for (std::size_t i : split_indices(m, split)) {
    auto e = load_entry(m, i);
    if (e.label.numel() == 0)
      throw DataError(m.domain_tag + " manifest: entry " + std::to_string(i) + " has no label");
    out.push_back(std::move(e));
  }
  if (out.empty()) throw DataError(m.domain_tag + " manifest: no '" + split + "' entries");
  return out;
}

std::vector<UnlabeledImage> load_unlabeled_split(const DatasetManifest& m,
                                                 const std::string& split) {
  std::vector<UnlabeledImage> out;
  for (std::size_t i : split_indices(m, split))
    out.push_back(UnlabeledImage{read_rgb_png(m.image_path(i))});
  if (out.empty()) throw DataError(m.domain_tag + " manifest: no '" + split + "' entries");
  return out;
}

// ---- gen-data ----

int cmd_gen_data(const fs::path& spec_path, int count, std::uint64_t seed, const fs::path& out) {
  auto sp = domain_spec_from_json(read_json_file(spec_path, "domain spec"));
  int eval_n = std::max(1, count / 4);

  auto src = gen_toy_source(sp, count + eval_n, seed);
  auto split = [count](std::size_t i) {
    return i < static_cast<std::size_t>(count) ? "train" : "eval";
  };
  materialize_labeled(out / "source", "source", sp, seed, src, split);
  materialize_unlabeled(out / "target_train", "target", sp, seed, gen_toy_target(sp, count, seed),
                        [](std::size_t) { return "train"; });
  std::uint64_t eval_seed = seed ^ 0x7a67e7a1ULL;
  materialize_labeled(out / "target_eval", "target", sp, eval_seed,
                      gen_toy_target_labeled(sp, eval_n, eval_seed),
                      [](std::size_t) { return "eval"; });
  write_run_manifest(out, "procst-gen-data",
                     {{"spec", {{"height", sp.height}, {"width", sp.width},
                                {"num_classes", sp.num_classes}}},
                      {"count", count},
                      {"eval_count", eval_n},
                      {"seed", seed}});
  std::cout << "wrote " << (out / "source") << ", " << (out / "target_train") << ", "
            << (out / "target_eval") << "\n";
  return 0;
}

// ---- train ----

struct TrainOverrides {
  std::optional<std::string> source, target;
  std::optional<int> num_scales, width, iters, iters_last, batch, critic_steps, ckpt_every,
      seg_steps, seg_batch, crop_h, crop_w;
  std::optional<double> scale_factor, lr_g, lr_d, lr_semseg, max_loss_abs;
  std::optional<int> top_h, top_w;
  std::optional<std::uint64_t> seed;
  std::optional<double> w_adv, w_style, w_cyclic, w_labels, w_content, w_gram, w_tv, w_gp;

  void apply(RunSetup& s) const {
    if (source) s.source_manifest = *source;
    if (target) s.target_manifest = *target;
    auto& c = s.train;
    if (num_scales || scale_factor || top_h || top_w)
      c.spec = ScaleSpec::make(num_scales.value_or(c.spec.num_scales),
                               scale_factor.value_or(c.spec.scale_factor),
                               top_h.value_or(c.spec.top_h), top_w.value_or(c.spec.top_w));
    if (width) c.width = *width;
    if (iters) c.iterations_per_scale = *iters;
    if (iters_last) c.iterations_last_scale = *iters_last;
    if (batch) c.batch_size = *batch;
    if (lr_g) c.lr_g = *lr_g;
    if (lr_d) c.lr_d = *lr_d;
    if (lr_semseg) c.lr_semseg = *lr_semseg;
    if (critic_steps) c.critic_steps_per_gen = *critic_steps;
    if (seed) c.seed = *seed;
    if (ckpt_every) c.checkpoint_every = *ckpt_every;
    if (max_loss_abs) c.max_loss_abs = *max_loss_abs;
    if (seg_steps) c.seg_steps = *seg_steps;
    if (seg_batch) c.seg_batch = *seg_batch;
    if (crop_h) c.crop_h = *crop_h;
    if (crop_w) c.crop_w = *crop_w;
    if (w_adv) c.weights.adv = *w_adv;
    if (w_style) c.weights.style = *w_style;
    if (w_cyclic) c.weights.cyclic = *w_cyclic;
    if (w_labels) c.weights.labels = *w_labels;
    if (w_content) c.weights.content = *w_content;
    if (w_gram) c.weights.gram = *w_gram;
    if (w_tv) c.weights.tv = *w_tv;
    if (w_gp) c.weights.gp = *w_gp;
    s.uda.train = c;
  }
};

void add_train_overrides(CLI::App* cmd, TrainOverrides& o) {
  cmd->add_option("--source", o.source, "source manifest (overrides config)");
  cmd->add_option("--target", o.target, "target-train manifest (overrides config)");
  cmd->add_option("--num-scales", o.num_scales);
  cmd->add_option("--scale-factor", o.scale_factor);
  cmd->add_option("--top-h", o.top_h);
  cmd->add_option("--top-w", o.top_w);
  cmd->add_option("--width", o.width);
  cmd->add_option("--iterations-per-scale", o.iters);
  cmd->add_option("--iterations-last-scale", o.iters_last);
  cmd->add_option("--batch-size", o.batch);
  cmd->add_option("--lr-g", o.lr_g);
  cmd->add_option("--lr-d", o.lr_d);
  cmd->add_option("--lr-semseg", o.lr_semseg);
  cmd->add_option("--critic-steps-per-gen", o.critic_steps);
  cmd->add_option("--seed", o.seed);
  cmd->add_option("--checkpoint-every", o.ckpt_every);
  cmd->add_option("--max-loss-abs", o.max_loss_abs);
  cmd->add_option("--seg-steps", o.seg_steps);
  cmd->add_option("--seg-batch", o.seg_batch);
  cmd->add_option("--crop-h", o.crop_h);
  cmd->add_option("--crop-w", o.crop_w);
  cmd->add_option("--lambda-adv", o.w_adv);
  cmd->add_option("--lambda-style", o.w_style);
  cmd->add_option("--lambda-cyclic", o.w_cyclic);
  cmd->add_option("--lambda-labels", o.w_labels);
  cmd->add_option("--lambda-content", o.w_content);
  cmd->add_option("--lambda-gram", o.w_gram);
  cmd->add_option("--lambda-tv", o.w_tv);
  cmd->add_option("--lambda-gp", o.w_gp);
}

int cmd_train(const fs::path& config, const fs::path& out, const std::string& ablation,
              const TrainOverrides& o) {
  RunSetup s = setup_from_file(config);
  o.apply(s);
  Ablation variant = parse_ablation(ablation);
  s.train = apply_ablation(s.train, AblationConfig{variant});
  if (s.source_manifest.empty() || s.target_manifest.empty())
    throw ConfigError("train: source_manifest and target_manifest required (config or flags)");

  auto src_m = load_manifest(s.source_manifest);
  auto tgt_m = load_manifest(s.target_manifest);
  auto source = load_labeled_split(src_m, "train");
  auto target = load_unlabeled_split(tgt_m, "train");
  int k = s.num_classes > 0 ? s.num_classes : src_m.spec.num_classes;

  auto res = train_progressive<float>(source, target, k, s.train, out, nullptr,
                                      ablation_name(variant), s.source_manifest,
                                      s.target_manifest);
  std::cout << "trained " << res.per_scale.size() << " scales -> "
            << (out / "checkpoint_final.ckpt") << "\n";
  return 0;
}

// ---- translate ----

int cmd_translate(const fs::path& ckpt, const fs::path& manifest, const fs::path& out,
                  const std::string& direction) {
  if (direction != "st" && direction != "ts")
    throw ArgError("translate: --direction must be st or ts");
  auto model = load_checkpoint<float>(ckpt);
  auto m = load_manifest(manifest);
  DatasetManifest result = direction == "st" ? build_sit_dataset(model, m, out)
                                             : build_tis_dataset(model, m, out);
  write_run_manifest(out, "procst-translate",
                     {{"checkpoint", ckpt.string()},
                      {"input_manifest", manifest.string()},
                      {"direction", direction},
                      {"entries", result.entries.size()}});
  std::cout << "translated " << result.entries.size() << " images -> "
            << (out / "manifest.jsonl") << "\n";
  return 0;
}

// ---- evaluate ----

int cmd_evaluate(const fs::path& source, const fs::path& sit, const fs::path& target_train,
                 const fs::path& target_eval, const fs::path& out,
                 const std::vector<std::uint64_t>& seeds, const std::string& config,
                 const std::string& ckpt, std::optional<int> rounds, std::optional<double> tau) {
  RunSetup s = config.empty() ? RunSetup{} : setup_from_file(config);
  if (rounds) s.uda.rounds = *rounds;
  if (tau) s.uda.tau = *tau;
  if (!seeds.empty()) s.seeds = seeds;

  auto src_m = load_manifest(source);
  auto sit_m = load_manifest(sit);
  auto tt_m = load_manifest(target_train);
  auto te_m = load_manifest(target_eval);
  fs::create_directories(out);

  auto cmp = compare_uda<float>(src_m, sit_m, tt_m, te_m, s.uda, s.seeds);
  write_uda_csv(out / "uda_table.csv", cmp);

  FeatureExtractor<float> fx;
  auto src_imgs = load_images(src_m, "train");
  auto sit_imgs = load_images(sit_m, "train");
  auto tgt_imgs = load_images(tt_m, "train");
  write_gap_csv(out / "domain_gap.csv", fx, {"source", "sit", "target"},
                {src_imgs, sit_imgs, tgt_imgs});

  std::size_t rows = std::min<std::size_t>(
      4, std::min(src_imgs.size(), std::min(sit_imgs.size(), tgt_imgs.size())));
  auto head = [&](const std::vector<Tensor<float>>& v) {
    return std::vector<Tensor<float>>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(rows));
  };
  std::vector<std::vector<Tensor<float>>> cols{head(src_imgs), head(sit_imgs), head(tgt_imgs)};
  if (!ckpt.empty()) {
    auto model = load_checkpoint<float>(ckpt);
    std::vector<Tensor<float>> tis;
    auto idx = split_indices(tt_m, "train");
    for (std::size_t r = 0; r < rows; ++r)
      tis.push_back(translate_png(model, tt_m.image_path(idx[r]), false));
    cols.push_back(std::move(tis));
  }
  write_comparison_grid(out / "grid.png", cols);

  json seeds_j = s.seeds;
  write_run_manifest(out, "procst-evaluate",
                     {{"source", source.string()},
                      {"sit", sit.string()},
                      {"target_train", target_train.string()},
                      {"target_eval", target_eval.string()},
                      {"seeds", seeds_j},
                      {"rounds", s.uda.rounds},
                      {"tau", s.uda.tau},
                      {"checkpoint", ckpt}});
  std::cout << "wrote " << (out / "uda_table.csv") << ", " << (out / "domain_gap.csv") << ", "
            << (out / "grid.png") << "\n";
  return 0;
}

// ---- ablate ----

struct AblationRow {
  Ablation variant;
  bool converged = false;
  std::vector<double> mious;  // per seed, self-train on this variant's SiT
};

int cmd_ablate(const fs::path& config, const fs::path& out) {
  RunSetup s = setup_from_file(config);
  if (s.source_manifest.empty() || s.target_manifest.empty() || s.target_eval_manifest.empty())
    throw ConfigError(
        "ablate: source_manifest, target_manifest and target_eval_manifest required in config");
  auto src_m = load_manifest(s.source_manifest);
  auto tgt_m = load_manifest(s.target_manifest);
  auto te_m = load_manifest(s.target_eval_manifest);
  check_split_firewall(tgt_m, te_m);
  auto source = load_labeled_split(src_m, "train");
  auto target = load_unlabeled_split(tgt_m, "train");
  auto eval_data = load_labeled_split(te_m, "eval");
  std::vector<UnlabeledImage> tgt_train_imgs = target;
  int k = s.num_classes > 0 ? s.num_classes : src_m.spec.num_classes;
  fs::create_directories(out);

  const Ablation variants[] = {Ablation::full, Ablation::no_label, Ablation::single_scale,
                               Ablation::no_style, Ablation::no_cyclic};
  std::vector<AblationRow> rows;
  for (Ablation v : variants) {
    AblationRow row{v};
    TrainConfig cfg = s.train;
    cfg = apply_ablation(cfg, AblationConfig{v});
    fs::path vdir = out / ablation_name(v);
    try {
      train_progressive<float>(source, target, k, cfg, vdir, nullptr, ablation_name(v),
                               s.source_manifest, s.target_manifest);
      row.converged = true;
    } catch (const DivergenceError& e) {
      std::cerr << ablation_name(v) << ": " << e.what() << "\n";
    }
    if (row.converged) {
      auto model = load_checkpoint<float>(vdir / "checkpoint_final.ckpt");
      auto sit_m = build_sit_dataset(model, src_m, vdir / "sit");
      auto sit_data = load_labeled_split(sit_m, "train");
      for (std::uint64_t seed : s.seeds) {
        UdaConfig run = s.uda;
        run.train = cfg;
        run.train.seed = seed;
        try {
          auto res = self_train_uda<float>(sit_data, tgt_train_imgs, k, run);
          row.mious.push_back(evaluate_miou(res.seg, eval_data, k).miou);
        } catch (const DivergenceError& e) {
          std::cerr << ablation_name(v) << " seed " << seed << ": " << e.what() << "\n";
        }
      }
    }
    rows.push_back(std::move(row));
  }

  std::ofstream os(out / "ablation_table.csv");
  if (!os) throw DataError("cannot write ablation table");
  os << "variant,label_loss,multiscale,style_loss,cyclic_loss,converged,sit_self_train_miou\n";
  for (const auto& r : rows) {
    auto yn = [](bool b) { return b ? "yes" : "no"; };
    os << ablation_name(r.variant) << "," << yn(r.variant != Ablation::no_label) << ","
       << yn(r.variant != Ablation::single_scale) << "," << yn(r.variant != Ablation::no_style)
       << "," << yn(r.variant != Ablation::no_cyclic) << "," << yn(r.converged) << ",";
    if (!r.mious.empty()) os << median_of(r.mious);
    os << "\n";
  }
  os.close();

  json seeds_j = s.seeds;
  write_run_manifest(out, "procst-ablate",
                     {{"config", config.string()}, {"seeds", seeds_j},
                      {"source", s.source_manifest}, {"target", s.target_manifest}});
  std::cout << "wrote " << (out / "ablation_table.csv") << "\n";
  return 0;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"progressive cyclic style transfer for segmentation domain adaptation"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "synthesize source/target datasets");
  std::string g_spec, g_out;
  int g_count = 0;
  std::uint64_t g_seed = 1;
  gen->add_option("--spec", g_spec, "domain spec json")->required();
  gen->add_option("--count", g_count, "train images per domain")
      ->required()
      ->check(CLI::PositiveNumber);
  gen->add_option("--seed", g_seed)->required();
  gen->add_option("--out", g_out)->required();

  auto* tr = app.add_subcommand("train", "progressive translation training");
  std::string t_config, t_out, t_ablation = "full";
  TrainOverrides t_over;
  tr->add_option("--config", t_config)->required();
  tr->add_option("--out", t_out)->required();
  tr->add_option("--ablation", t_ablation,
                 "full | no_label | single_scale | no_style | no_cyclic");
  add_train_overrides(tr, t_over);

  auto* tl = app.add_subcommand("translate", "apply a trained model to a dataset");
  std::string l_ckpt, l_manifest, l_out, l_dir = "st";
  tl->add_option("--checkpoint", l_ckpt)->required();
  tl->add_option("--manifest", l_manifest)->required();
  tl->add_option("--out", l_out)->required();
  tl->add_option("--direction", l_dir, "st (default) or ts");

  auto* ev = app.add_subcommand("evaluate", "UDA comparison and domain-gap report");
  std::string e_src, e_sit, e_tt, e_te, e_out, e_config, e_ckpt;
  std::vector<std::uint64_t> e_seeds;
  std::optional<int> e_rounds;
  std::optional<double> e_tau;
  ev->add_option("--source", e_src)->required();
  ev->add_option("--sit", e_sit)->required();
  ev->add_option("--target-train", e_tt)->required();
  ev->add_option("--target-eval", e_te)->required();
  ev->add_option("--out", e_out)->required();
  ev->add_option("--seeds", e_seeds)->delimiter(',');
  ev->add_option("--config", e_config);
  ev->add_option("--checkpoint", e_ckpt, "adds the reverse-direction column to the grid");
  ev->add_option("--rounds", e_rounds);
  ev->add_option("--tau", e_tau);

  auto* ab = app.add_subcommand("ablate", "all five variants end-to-end");
  std::string a_config, a_out;
  ab->add_option("--config", a_config)->required();
  ab->add_option("--out", a_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (*gen) return cmd_gen_data(g_spec, g_count, g_seed, g_out);
  if (*tr) return cmd_train(t_config, t_out, t_ablation, t_over);
  if (*tl) return cmd_translate(l_ckpt, l_manifest, l_out, l_dir);
  if (*ev)
    return cmd_evaluate(e_src, e_sit, e_tt, e_te, e_out, e_seeds, e_config, e_ckpt, e_rounds,
                        e_tau);
  if (*ab) return cmd_ablate(a_config, a_out);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  const char* det = std::getenv("PROCST_DETERMINISTIC");
  if (det && std::strcmp(det, "1") == 0) openblas_set_num_threads(1);
  try {
    return dispatch(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ArgError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 4;
  } catch (const VersionError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 4;
  } catch (const StateError& e) {
    std::cerr << "state error: " << e.what() << "\n";
    return 4;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
