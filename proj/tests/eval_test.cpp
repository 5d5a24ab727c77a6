#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "procst/core/rng.hpp"
#include "procst/eval/miou.hpp"

using namespace procst;

namespace {

Tensor<std::uint8_t> rand_labels(Rng& rng, const std::vector<int>& shape, int k,
                                 double ignore_frac = 0.0) {
  Tensor<std::uint8_t> t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (ignore_frac > 0 && rng.uniform() < ignore_frac)
      t[i] = kIgnoreLabel;
    else
      t[i] = static_cast<std::uint8_t>(rng.uniform_int(k));
  }
  return t;
}

struct NaiveIou {
  std::vector<double> iou;
  std::vector<bool> present;
  double miou = 0;
};

NaiveIou naive_iou(const Tensor<std::uint8_t>& pred, const Tensor<std::uint8_t>& gt, int k) {
  NaiveIou r;
  r.iou.assign(static_cast<std::size_t>(k), std::nan(""));
  r.present.assign(static_cast<std::size_t>(k), false);
  double sum = 0;
  int n = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.numel(); ++i) {
      if (gt[i] == kIgnoreLabel) continue;
      bool in_p = pred[i] == c, in_g = gt[i] == c;
      if (in_p && in_g) ++inter;
      if (in_p || in_g) ++uni;
    }
    if (uni == 0) continue;
    r.present[static_cast<std::size_t>(c)] = true;
    r.iou[static_cast<std::size_t>(c)] = static_cast<double>(inter) / static_cast<double>(uni);
    sum += r.iou[static_cast<std::size_t>(c)];
    ++n;
  }
  r.miou = n ? sum / n : 0;
  return r;
}

}  // namespace

TEST(Miou, BruteForceOracleLoop) {
  Rng rng(81);
  for (int it = 0; it < 100; ++it) {
    int k = 2 + static_cast<int>(rng.uniform_int(4));
    int b = 1 + static_cast<int>(rng.uniform_int(2));
    int h = 3 + static_cast<int>(rng.uniform_int(4));
    int w = 3 + static_cast<int>(rng.uniform_int(4));
    auto gt = rand_labels(rng, {b, h, w}, k, it % 3 == 0 ? 0.1 : 0.0);
    auto pred = rand_labels(rng, {b, h, w}, k);
    bool any = false;
    for (std::size_t i = 0; i < gt.numel(); ++i) any |= gt[i] != kIgnoreLabel;
    if (!any) continue;

    ConfusionAccumulator acc(k);
    acc.add(pred, gt);
    auto rep = acc.report();
    auto want = naive_iou(pred, gt, k);
    ASSERT_NEAR(rep.miou, want.miou, 1e-12);
    for (int c = 0; c < k; ++c) {
      ASSERT_EQ(rep.present[static_cast<std::size_t>(c)], want.present[static_cast<std::size_t>(c)]);
      if (want.present[static_cast<std::size_t>(c)])
        ASSERT_NEAR(rep.iou[static_cast<std::size_t>(c)], want.iou[static_cast<std::size_t>(c)],
                    1e-12);
    }
  }
}

TEST(Miou, GlobalSumNotPerImageAverage) {
  // Feeding images one by one, in batches, or merged accumulators must all
  // reproduce the single global confusion matrix.
  Rng rng(82);
  int k = 3;
  auto gt = rand_labels(rng, {4, 6, 5}, k);
  auto pred = rand_labels(rng, {4, 6, 5}, k);

  ConfusionAccumulator whole(k);
  whole.add(pred, gt);

  ConfusionAccumulator per_image(k);
  for (int i = 0; i < 4; ++i) {
    Tensor<std::uint8_t> p({1, 6, 5}), g({1, 6, 5});
    std::copy(pred.data() + i * 30, pred.data() + (i + 1) * 30, p.data());
    std::copy(gt.data() + i * 30, gt.data() + (i + 1) * 30, g.data());
    per_image.add(p, g);
  }
  EXPECT_EQ(whole.counts, per_image.counts);

  ConfusionAccumulator a(k), bacc(k);
  Tensor<std::uint8_t> p1({2, 6, 5}), g1({2, 6, 5}), p2({2, 6, 5}), g2({2, 6, 5});
  std::copy(pred.data(), pred.data() + 60, p1.data());
  std::copy(gt.data(), gt.data() + 60, g1.data());
  std::copy(pred.data() + 60, pred.data() + 120, p2.data());
  std::copy(gt.data() + 60, gt.data() + 120, g2.data());
  a.add(p1, g1);
  bacc.add(p2, g2);
  a.merge(bacc);
  EXPECT_EQ(whole.counts, a.counts);
  EXPECT_NEAR(whole.report().miou, a.report().miou, 0.0);

  // A per-image mIoU average would differ: craft a case where image-level
  // scores are 1.0 and 0.0 but the global matrix mixes pixels unevenly.
  ConfusionAccumulator g3(2);
  Tensor<std::uint8_t> easy({1, 2, 2}, 1), easy_gt({1, 2, 2}, 1);
  Tensor<std::uint8_t> hard({1, 2, 2}, 0), hard_gt({1, 2, 2}, 1);
  hard_gt[0] = 0;  // one pixel right for class 0
  g3.add(easy, easy_gt);
  g3.add(hard, hard_gt);
  // class 0: tp=1 fp=3 fn=0 -> 0.25 ; class 1: tp=4 fp=0 fn=3 -> 4/7
  EXPECT_NEAR(g3.report().miou, 0.5 * (0.25 + 4.0 / 7.0), 1e-12);
}

TEST(Miou, PerfectAndDisjoint) {
  Rng rng(83);
  auto gt = rand_labels(rng, {1, 8, 8}, 4);
  ConfusionAccumulator acc(4);
  acc.add(gt, gt);
  EXPECT_EQ(acc.report().miou, 1.0);

  Tensor<std::uint8_t> g({1, 4, 4}, 0), p({1, 4, 4}, 1);
  for (int i = 8; i < 16; ++i) {
    g[static_cast<std::size_t>(i)] = 1;
    p[static_cast<std::size_t>(i)] = 0;
  }
  ConfusionAccumulator d(2);
  d.add(p, g);
  EXPECT_EQ(d.report().miou, 0.0);
}

TEST(Miou, PermutationEquivariance) {
  Rng rng(84);
  int k = 5;
  auto gt = rand_labels(rng, {2, 6, 6}, k, 0.1);
  auto pred = rand_labels(rng, {2, 6, 6}, k);
  std::vector<int> perm{3, 0, 4, 2, 1};

  ConfusionAccumulator base(k), permuted(k);
  base.add(pred, gt);
  Tensor<std::uint8_t> pp = pred, pg = gt;
  for (std::size_t i = 0; i < pp.numel(); ++i) {
    pp[i] = static_cast<std::uint8_t>(perm[pp[i]]);
    if (pg[i] != kIgnoreLabel) pg[i] = static_cast<std::uint8_t>(perm[pg[i]]);
  }
  permuted.add(pp, pg);
  auto r0 = base.report(), r1 = permuted.report();
  EXPECT_NEAR(r0.miou, r1.miou, 1e-12);
  for (int c = 0; c < k; ++c) {
    EXPECT_EQ(r0.present[static_cast<std::size_t>(c)],
              r1.present[static_cast<std::size_t>(perm[c])]);
    if (r0.present[static_cast<std::size_t>(c)])
      EXPECT_NEAR(r0.iou[static_cast<std::size_t>(c)],
                  r1.iou[static_cast<std::size_t>(perm[c])], 1e-12);
  }
}

TEST(Miou, ZeroUnionClassesExcluded) {
  Tensor<std::uint8_t> gt({1, 2, 4}), pred({1, 2, 4});
  std::uint8_t gv[] = {0, 0, 1, 1, 0, 1, 0, 1};
  std::uint8_t pv[] = {0, 1, 1, 1, 0, 0, 0, 1};
  for (int i = 0; i < 8; ++i) {
    gt[static_cast<std::size_t>(i)] = gv[i];
    pred[static_cast<std::size_t>(i)] = pv[i];
  }
  ConfusionAccumulator acc(4);
  acc.add(pred, gt);
  auto r = acc.report();
  EXPECT_FALSE(r.present[2]);
  EXPECT_FALSE(r.present[3]);
  EXPECT_TRUE(std::isnan(r.iou[2]));
  // class 0: tp=3 fp=1 fn=1 ; class 1: tp=3 fp=1 fn=1
  EXPECT_NEAR(r.miou, 3.0 / 5.0, 1e-12);
}

TEST(Miou, ErrorsAndIgnoreHandling) {
  ConfusionAccumulator acc(3);
  Tensor<std::uint8_t> all_ignored({1, 2, 2}, kIgnoreLabel);
  Tensor<std::uint8_t> pred({1, 2, 2}, 0);
  acc.add(pred, all_ignored);  // nothing counted
  EXPECT_THROW(acc.report(), DataError);

  Tensor<std::uint8_t> bad_gt({1, 2, 2}, 7);
  EXPECT_THROW(acc.add(pred, bad_gt), DataError);
  Tensor<std::uint8_t> good_gt({1, 2, 2}, 1);
  Tensor<std::uint8_t> bad_pred({1, 2, 2}, 3);
  EXPECT_THROW(acc.add(bad_pred, good_gt), DataError);
  Tensor<std::uint8_t> wrong_shape({1, 2, 3}, 0);
  EXPECT_THROW(acc.add(pred, wrong_shape), ShapeError);
  EXPECT_THROW(ConfusionAccumulator(1), ConfigError);

  // 255 in pred is NOT a valid class even though it is ignored in gt.
  Tensor<std::uint8_t> pred255({1, 2, 2}, kIgnoreLabel);
  EXPECT_THROW(acc.add(pred255, good_gt), DataError);
}

TEST(Miou, CsvReport) {
  Rng rng(85);
  auto gt = rand_labels(rng, {1, 6, 6}, 3);
  auto pred = rand_labels(rng, {1, 6, 6}, 3);
  ConfusionAccumulator acc(4);  // class 3 never appears
  acc.add(pred, gt);
  auto rep = acc.report();

  auto path = std::filesystem::temp_directory_path() / "procst_iou_test.csv";
  write_iou_csv(path, rep);
  std::ifstream is(path);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 6u);  // header + 4 classes + miou
  EXPECT_EQ(lines[0], "class,tp,fp,fn,iou");
  EXPECT_NE(lines[4].find("absent"), std::string::npos);
  double miou = 0;
  ASSERT_EQ(std::sscanf(lines[5].c_str(), "miou,,,,%lf", &miou), 1);
  EXPECT_NEAR(miou, rep.miou, 1e-9);
  std::filesystem::remove(path);
}
