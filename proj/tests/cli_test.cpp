#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "procst/data/manifest.hpp"
#include "procst/data/png_io.hpp"

using namespace procst;
namespace fs = std::filesystem;

namespace {

fs::path work_root() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "procst_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run_cli(const std::string& args) {
  std::string cmd = std::string(PROCST_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return lines;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream os(p);
  os << body;
}

// One shared data + train fixture built once; subcommand tests reuse it.
struct Artifacts {
  fs::path root, dspec, cfg, data, run, sit;
};

const Artifacts& arts() {
  static Artifacts a = [] {
    Artifacts x;
    x.root = work_root();
    x.dspec = x.root / "dspec.json";
    write_file(x.dspec, R"({"height": 32, "width": 32, "num_classes": 4})");
    x.data = x.root / "data";
    x.cfg = x.root / "cfg.json";
    std::ostringstream cfg;
    cfg << R"({
      "source_manifest": ")" << (x.data / "source" / "manifest.jsonl").string() << R"(",
      "target_manifest": ")" << (x.data / "target_train" / "manifest.jsonl").string() << R"(",
      "target_eval_manifest": ")" << (x.data / "target_eval" / "manifest.jsonl").string() << R"(",
      "train": {
        "num_scales": 2, "top_h": 32, "top_w": 32, "width": 8,
        "iterations_per_scale": 2, "iterations_last_scale": 2,
        "batch_size": 2, "seg_steps": 4, "seg_batch": 2, "lr_semseg": 0.05,
        "seed": 3, "checkpoint_every": 2
      },
      "uda": {"rounds": 1, "tau": 0.5},
      "seeds": [1, 2]
    })";
    write_file(x.cfg, cfg.str());
    x.run = x.root / "run";
    x.sit = x.root / "sit";
    if (run_cli("gen-data --spec " + x.dspec.string() + " --count 6 --seed 5 --out " +
                x.data.string()) != 0)
      throw std::runtime_error("fixture gen-data failed");
    if (run_cli("train --config " + x.cfg.string() + " --out " + x.run.string()) != 0)
      throw std::runtime_error("fixture train failed");
    if (run_cli("translate --checkpoint " + (x.run / "checkpoint_final.ckpt").string() +
                " --manifest " + (x.data / "source" / "manifest.jsonl").string() + " --out " +
                x.sit.string()) != 0)
      throw std::runtime_error("fixture translate failed");
    return x;
  }();
  return a;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("frobnicate"), 2);
  EXPECT_EQ(run_cli("gen-data"), 2);
  const auto& a = arts();
  EXPECT_EQ(run_cli("gen-data --spec " + a.dspec.string() + " --count 0 --seed 1 --out " +
                    (work_root() / "zero").string()),
            2);
  EXPECT_EQ(run_cli("train --config " + (work_root() / "missing.json").string() + " --out " +
                    (work_root() / "x").string()),
            2);
  EXPECT_EQ(run_cli("train --config " + a.cfg.string() + " --out " + (work_root() / "x").string() +
                    " --ablation bogus"),
            2);
  EXPECT_EQ(run_cli("--help"), 0);
}

TEST(Cli, GenDataRerunIsIdentical) {
  const auto& a = arts();
  fs::path again = work_root() / "data_again";
  ASSERT_EQ(run_cli("gen-data --spec " + a.dspec.string() + " --count 6 --seed 5 --out " +
                    again.string()),
            0);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.data)) {
    if (!e.is_regular_file()) continue;
    fs::path rel = fs::relative(e.path(), a.data);
    EXPECT_EQ(file_bytes(e.path()), file_bytes(again / rel)) << rel;
    ++compared;
  }
  EXPECT_GT(compared, 10u);

  auto m = load_manifest(a.data / "source" / "manifest.jsonl");
  EXPECT_EQ(m.domain_tag, "source");
  EXPECT_EQ(split_indices(m, "train").size(), 6u);
  EXPECT_EQ(split_indices(m, "eval").size(), 1u);
  auto tt = load_manifest(a.data / "target_train" / "manifest.jsonl");
  EXPECT_EQ(split_indices(tt, "train").size(), 6u);
  for (const auto& e : tt.entries) EXPECT_TRUE(e.label.empty());
}

TEST(Cli, TrainArtifactsAndAblationFlag) {
  const auto& a = arts();
  EXPECT_TRUE(fs::exists(a.run / "checkpoint_final.ckpt"));
  EXPECT_TRUE(fs::exists(a.run / "train_scale2.csv"));

  fs::path out = work_root() / "run_nolabel";
  ASSERT_EQ(run_cli("train --config " + a.cfg.string() + " --out " + out.string() +
                    " --ablation no_label"),
            0);
  std::ifstream is(out / "run_manifest.json");
  nlohmann::json m;
  is >> m;
  EXPECT_EQ(m.at("ablation"), "no_label");
  EXPECT_EQ(m.at("config").at("weights").at("labels").get<double>(), 0.0);
  EXPECT_FALSE(fs::exists(out / "seg_sit.ckpt"));

  fs::path out1 = work_root() / "run_single";
  ASSERT_EQ(run_cli("train --config " + a.cfg.string() + " --out " + out1.string() +
                    " --ablation single_scale"),
            0);
  std::ifstream is1(out1 / "run_manifest.json");
  nlohmann::json m1;
  is1 >> m1;
  EXPECT_EQ(m1.at("config").at("num_scales").get<int>(), 1);
  EXPECT_EQ(m1.at("config").at("top_h").get<int>(), 32);
}

TEST(Cli, TrainDivergenceExitsThree) {
  const auto& a = arts();
  EXPECT_EQ(run_cli("train --config " + a.cfg.string() + " --out " +
                    (work_root() / "run_div").string() + " --max-loss-abs 1e-12"),
            3);
}

TEST(Cli, TranslateDirectionsAndIntegrity) {
  const auto& a = arts();
  auto src = load_manifest(a.data / "source" / "manifest.jsonl");
  auto sit = load_manifest(a.sit / "manifest.jsonl");
  EXPECT_EQ(sit.entries.size(), src.entries.size());
  EXPECT_EQ(sit.domain_tag, "sit");
  for (std::size_t i = 0; i < sit.entries.size(); ++i) {
    EXPECT_EQ(sit.entries[i].split, src.entries[i].split);
    EXPECT_FALSE(sit.entries[i].label.empty());
  }

  fs::path tis = work_root() / "tis";
  ASSERT_EQ(run_cli("translate --checkpoint " + (a.run / "checkpoint_final.ckpt").string() +
                    " --manifest " + (a.data / "target_train" / "manifest.jsonl").string() +
                    " --out " + tis.string() + " --direction ts"),
            0);
  auto tm = load_manifest(tis / "manifest.jsonl");
  EXPECT_EQ(tm.domain_tag, "tis");
  EXPECT_EQ(tm.entries.size(), 6u);
  for (const auto& e : tm.entries) EXPECT_TRUE(e.label.empty());

  EXPECT_EQ(run_cli("translate --checkpoint " + (a.run / "train_scale1.csv").string() +
                    " --manifest " + (a.data / "source" / "manifest.jsonl").string() + " --out " +
                    (work_root() / "bad").string()),
            4);
  EXPECT_EQ(run_cli("translate --checkpoint " + (a.run / "checkpoint_final.ckpt").string() +
                    " --manifest " + (a.data / "source" / "manifest.jsonl").string() + " --out " +
                    (work_root() / "badder").string() + " --direction up"),
            2);
}

TEST(Cli, EvaluateReportsAndFirewall) {
  const auto& a = arts();
  fs::path out = work_root() / "eval";
  std::string base = "evaluate --source " + (a.data / "source" / "manifest.jsonl").string() +
                     " --sit " + (a.sit / "manifest.jsonl").string() + " --target-train " +
                     (a.data / "target_train" / "manifest.jsonl").string();
  ASSERT_EQ(run_cli(base + " --target-eval " +
                    (a.data / "target_eval" / "manifest.jsonl").string() + " --out " +
                    out.string() + " --seeds 1,2 --config " + a.cfg.string() + " --checkpoint " +
                    (a.run / "checkpoint_final.ckpt").string()),
            0);

  auto table = read_lines(out / "uda_table.csv");
  ASSERT_EQ(table.size(), 1u + 2u * 2u * 2u + 4u);
  EXPECT_EQ(table[0].rfind("input,method,seed,diverged", 0), 0u);

  auto gap = read_lines(out / "domain_gap.csv");
  ASSERT_EQ(gap.size(), 4u);
  EXPECT_EQ(gap[0], "domain,source,sit,target");
  double g[3][3];
  for (int r = 0; r < 3; ++r) {
    std::istringstream ss(gap[r + 1]);
    std::string cell;
    std::getline(ss, cell, ',');
    for (int c = 0; c < 3; ++c) {
      std::getline(ss, cell, ',');
      g[r][c] = std::stod(cell);
    }
  }
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      EXPECT_GE(g[r][c], 0.0);
      EXPECT_DOUBLE_EQ(g[r][c], g[c][r]);
    }
  EXPECT_LT(g[0][0], 1e-6);

  auto grid = read_rgb_png(out / "grid.png");
  EXPECT_EQ(grid.dim(1), 4 * 32 + 3 * 2);  // four sample rows
  EXPECT_EQ(grid.dim(2), 4 * 32 + 3 * 2);  // source | sit | target | tis

  EXPECT_EQ(run_cli(base + " --target-eval " +
                    (a.data / "target_train" / "manifest.jsonl").string() + " --out " +
                    (work_root() / "eval_bad").string() + " --seeds 1 --config " +
                    a.cfg.string()),
            5);
}

TEST(Cli, AblateEmitsFiveRows) {
  const auto& a = arts();
  fs::path out = work_root() / "abl";
  ASSERT_EQ(run_cli("ablate --config " + a.cfg.string() + " --out " + out.string()), 0);
  auto lines = read_lines(out / "ablation_table.csv");
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0], "variant,label_loss,multiscale,style_loss,cyclic_loss,converged,sit_self_train_miou");
  EXPECT_EQ(lines[1].rfind("full,yes,yes,yes,yes,", 0), 0u);
  EXPECT_EQ(lines[2].rfind("no_label,no,yes,yes,yes,", 0), 0u);
  EXPECT_EQ(lines[3].rfind("single_scale,yes,no,yes,yes,", 0), 0u);
  EXPECT_EQ(lines[4].rfind("no_style,yes,yes,no,yes,", 0), 0u);
  EXPECT_EQ(lines[5].rfind("no_cyclic,yes,yes,yes,no,", 0), 0u);
  for (int v : {1, 2, 3, 4, 5}) {
    auto cols = lines[static_cast<std::size_t>(v)];
    EXPECT_TRUE(cols.find(",yes,") != std::string::npos || cols.find(",no,") != std::string::npos);
  }
  EXPECT_TRUE(fs::exists(out / "full" / "sit" / "manifest.jsonl"));
}
