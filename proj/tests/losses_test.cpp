#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "procst/core/sym_eig.hpp"
#include "procst/losses/losses.hpp"
#include "procst/model/checkpoint.hpp"
#include "procst/model/multiscale.hpp"

using namespace procst;
using namespace procst::testing;

namespace {

// Straight-line double-precision reference for the feature/style math,
// sharing no code with the library implementation.
struct Plane {
  int c, h, w;
  std::vector<double> v;
  Plane(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_) {}
  double& at(int ci, int y, int x) {
    return v[(static_cast<std::size_t>(ci) * h + y) * static_cast<std::size_t>(w) + x];
  }
  double get(int ci, int y, int x) const {
    if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
    return v[(static_cast<std::size_t>(ci) * h + y) * static_cast<std::size_t>(w) + x];
  }
};

Plane naive_conv3(const Plane& in, const Tensor<double>& w, const Tensor<double>& b) {
  int co = w.dim(0), ci = w.dim(1);
  Plane out(co, in.h, in.w);
  for (int o = 0; o < co; ++o)
    for (int y = 0; y < in.h; ++y)
      for (int x = 0; x < in.w; ++x) {
        double acc = b[static_cast<std::size_t>(o)];
        for (int i = 0; i < ci; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx)
              acc += w.at(o, i, ky, kx) * in.get(i, y + ky - 1, x + kx - 1);
        out.at(o, y, x) = acc;
      }
  return out;
}

Plane naive_stage(const Plane& in, const Tensor<double>& w, const Tensor<double>& b) {
  Plane conv = naive_conv3(in, w, b);
  for (auto& x : conv.v) x = x > 0 ? x : 0.2 * x;
  Plane out(conv.c, conv.h / 2, conv.w / 2);
  for (int c = 0; c < out.c; ++c)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x)
        out.at(c, y, x) = 0.25 * (conv.get(c, 2 * y, 2 * x) + conv.get(c, 2 * y, 2 * x + 1) +
                                  conv.get(c, 2 * y + 1, 2 * x) + conv.get(c, 2 * y + 1, 2 * x + 1));
  return out;
}

std::vector<Plane> naive_stages(const FeatureExtractor<double>& fx, const Tensor<double>& img) {
  Plane x(img.dim(1), img.dim(2), img.dim(3));
  for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = img[i];
  std::vector<Plane> out;
  for (int s = 0; s < 4; ++s) {
    x = naive_stage(x, fx.convs[static_cast<std::size_t>(s)].w->value,
                    fx.convs[static_cast<std::size_t>(s)].b->value);
    out.push_back(x);
  }
  return out;
}

std::vector<double> naive_gram(const Plane& f) {
  std::vector<double> g(static_cast<std::size_t>(f.c) * f.c, 0.0);
  for (int a = 0; a < f.c; ++a)
    for (int b = 0; b < f.c; ++b) {
      double acc = 0;
      for (int y = 0; y < f.h; ++y)
        for (int x = 0; x < f.w; ++x) acc += f.get(a, y, x) * f.get(b, y, x);
      g[static_cast<std::size_t>(a) * f.c + b] = acc / (static_cast<double>(f.c) * f.h * f.w);
    }
  return g;
}

double naive_mse(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double naive_tv(const Tensor<double>& img) {
  int b = img.dim(0), c = img.dim(1), h = img.dim(2), w = img.dim(3);
  double acc = 0;
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < c; ++j)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double v = img.at(i, j, y, x);
          if (x + 1 < w) acc += (img.at(i, j, y, x + 1) - v) * (img.at(i, j, y, x + 1) - v);
          if (y + 1 < h) acc += (img.at(i, j, y + 1, x) - v) * (img.at(i, j, y + 1, x) - v);
        }
  double count = static_cast<double>(b) * c * (static_cast<double>(h) * (w - 1) +
                                               static_cast<double>(h - 1) * w);
  return acc / count;
}

Tensor<double> rand_img(Rng& rng, int b, int c, int h, int w) {
  Tensor<double> t({b, c, h, w});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1, 1);
  return t;
}

}  // namespace

TEST(Gram, OracleLoop) {
  Rng rng(51);
  for (int it = 0; it < 100; ++it) {
    int c = 1 + static_cast<int>(rng.uniform_int(4));
    int h = 1 + static_cast<int>(rng.uniform_int(5));
    int w = 1 + static_cast<int>(rng.uniform_int(5));
    Tensor<double> f({c, h, w});
    for (std::size_t i = 0; i < f.numel(); ++i) f[i] = rng.uniform(-2, 2);
    auto g = gram(make_const<double>(f));
    ASSERT_EQ(g->value.shape(), (std::vector<int>{c, c}));
    for (int a = 0; a < c; ++a)
      for (int b = 0; b < c; ++b) {
        double acc = 0;
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            acc += f[(static_cast<std::size_t>(a) * h + y) * static_cast<std::size_t>(w) + x] *
                   f[(static_cast<std::size_t>(b) * h + y) * static_cast<std::size_t>(w) + x];
        acc /= static_cast<double>(c) * h * w;
        ASSERT_NEAR(g->value[static_cast<std::size_t>(a) * c + b], acc, 1e-12);
        ASSERT_NEAR(g->value[static_cast<std::size_t>(a) * c + b],
                    g->value[static_cast<std::size_t>(b) * c + a], 1e-12);
      }
  }
}

TEST(Gram, ZeroAndPsd) {
  Tensor<double> z({3, 4, 5}, 0.0);
  auto g0 = gram(make_const<double>(z));
  for (std::size_t i = 0; i < g0->value.numel(); ++i) EXPECT_EQ(g0->value[i], 0.0);

  Rng rng(52);
  for (int it = 0; it < 20; ++it) {
    Tensor<double> f({4, 5, 6});
    for (std::size_t i = 0; i < f.numel(); ++i) f[i] = rng.uniform(-2, 2);
    auto g = gram(make_const<double>(f));
    std::vector<double> a(g->value.data(), g->value.data() + 16);
    for (double ev : sym_eigenvalues(a, 4)) EXPECT_GE(ev, -1e-10);
  }
  EXPECT_THROW(gram(make_const<double>(Tensor<double>({2, 2}))), ArgError);
}

TEST(Gram, Gradcheck) {
  Rng rng(53);
  auto f = rand_leaf(rng, {2, 3, 4});
  auto target = make_const(rand_tensor(rng, {2, 2}));
  auto build = [&] { return mse(gram(f), target); };
  expect_gradients_match(build, {f});
}

TEST(TvLoss, ClosedFormsAndInvariance) {
  Tensor<double> flat({1, 2, 4, 6}, 0.7);
  EXPECT_EQ(scalar_value(tv_loss(make_const<double>(flat))), 0.0);

  // Vertical step edge between columns 2 and 3.
  Tensor<double> edge({1, 1, 4, 6});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 6; ++x) edge.at(0, 0, y, x) = x < 3 ? 0.2 : 0.9;
  double expected = 4 * (0.7 * 0.7) / (4.0 * 5 + 3.0 * 6);
  EXPECT_NEAR(scalar_value(tv_loss(make_const<double>(edge))), expected, 1e-12);

  Rng rng(54);
  auto img = rand_img(rng, 2, 3, 5, 7);
  auto shifted = img;
  for (std::size_t i = 0; i < shifted.numel(); ++i) shifted[i] += 0.37;
  EXPECT_NEAR(scalar_value(tv_loss(make_const<double>(img))),
              scalar_value(tv_loss(make_const<double>(shifted))), 1e-9);
  EXPECT_NEAR(scalar_value(tv_loss(make_const<double>(img))), naive_tv(img), 1e-12);
}

TEST(TvLoss, Gradcheck) {
  Rng rng(55);
  auto x = rand_leaf(rng, {1, 2, 4, 5});
  auto build = [&] { return tv_loss(x); };
  expect_gradients_match(build, {x});
}

TEST(StyleLoss, IdentityCases) {
  FeatureExtractor<double> fx;
  Rng rng(56);
  LossWeights w;
  auto s = make_const(rand_img(rng, 1, 3, 16, 16));
  auto t_const = make_const<double>(Tensor<double>({1, 3, 16, 16}, 0.3));
  auto parts_content = style_loss_parts<double>(s, t_const, s, fx, w);
  EXPECT_NEAR(scalar_value(parts_content.content), 0.0, 1e-12);
  EXPECT_GT(scalar_value(parts_content.tv), 0.0);

  auto t = make_const(rand_img(rng, 1, 3, 16, 16));
  auto parts_style = style_loss_parts<double>(s, t, t, fx, w);
  EXPECT_NEAR(scalar_value(parts_style.gram_term), 0.0, 1e-12);
}

TEST(StyleLoss, MatchesIndependentReimplementation) {
  FeatureExtractor<double> fx;
  LossWeights w;
  Rng rng(57);
  auto s_t = rand_img(rng, 1, 3, 16, 16);
  auto t_t = rand_img(rng, 1, 3, 16, 16);
  auto g_t = rand_img(rng, 1, 3, 16, 16);
  auto got = scalar_value(style_loss<double>(make_const<double>(s_t), make_const<double>(t_t),
                                             make_const<double>(g_t), fx, w));

  auto fs = naive_stages(fx, s_t);
  auto ft = naive_stages(fx, t_t);
  auto fg = naive_stages(fx, g_t);
  double content = 0;
  {
    const auto& a = fs[2].v;
    const auto& b = fg[2].v;
    content = naive_mse(a, b);
  }
  double gram_term = 0;
  for (int l = 0; l < 4; ++l)
    gram_term += naive_mse(naive_gram(ft[static_cast<std::size_t>(l)]),
                           naive_gram(fg[static_cast<std::size_t>(l)]));
  double want = w.content * content + w.gram * gram_term + w.tv * naive_tv(g_t);
  EXPECT_NEAR(got, want, 1e-10);
}

TEST(StyleLoss, GradcheckThroughExtractor) {
  FeatureExtractor<double> fx;
  LossWeights w;
  Rng rng(58);
  auto s = make_const(rand_img(rng, 1, 3, 16, 16));
  auto t = make_const(rand_img(rng, 1, 3, 16, 16));
  auto gen = rand_leaf(rng, {1, 3, 16, 16});
  auto build = [&] { return style_loss<double>(s, t, gen, fx, w); };
  expect_gradients_match(build, {gen}, 1e-5, 2e-5);
}

TEST(AdvLoss, GeneratorSide) {
  Rng rng(59);
  auto w = make_leaf(rand_tensor(rng, {1, 3, 1, 1}));
  CriticFn<double> d = [&](const Var<double>& x) { return conv2d(x, w, 1, 0); };
  auto fake = make_const(rand_img(rng, 2, 3, 4, 4));

  auto loss = adv_loss_generator(d, fake);
  auto map = conv2d(fake, w, 1, 0);
  double m = 0;
  for (std::size_t i = 0; i < map->value.numel(); ++i) m += map->value[i];
  m /= static_cast<double>(map->value.numel());
  EXPECT_NEAR(scalar_value(loss), -m, 1e-12);

  for (std::size_t i = 0; i < w->value.numel(); ++i) w->value[i] = -w->value[i];
  EXPECT_NEAR(scalar_value(adv_loss_generator(d, fake)), m, 1e-12);

  w->value.fill(0.0);
  EXPECT_EQ(scalar_value(adv_loss_generator(d, fake)), 0.0);
}

TEST(AdvLoss, CriticLinearClosedForm) {
  Rng rng(60);
  auto w = make_leaf(rand_tensor(rng, {1, 3, 5, 5}, -0.3, 0.3));
  CriticFn<double> d = [&](const Var<double>& x) { return conv2d(x, w, 1, 0); };
  auto real = make_const(rand_img(rng, 4, 3, 5, 5));
  auto fake = make_const(rand_img(rng, 4, 3, 5, 5));
  Tensor<double> eps({4});
  for (int i = 0; i < 4; ++i) eps[static_cast<std::size_t>(i)] = rng.uniform();

  auto parts = adv_loss_critic_parts<double>(d, real, fake, eps, 10.0);
  double wn = 0;
  for (std::size_t i = 0; i < w->value.numel(); ++i) wn += w->value[i] * w->value[i];
  wn = std::sqrt(wn);
  EXPECT_NEAR(scalar_value(parts.penalty), (wn - 1) * (wn - 1), 1e-9);

  double mf = 0, mr = 0;
  for (int i = 0; i < 4; ++i) {
    double df = 0, dr = 0;
    for (std::size_t j = 0; j < w->value.numel(); ++j) {
      df += w->value[j] * fake->value[static_cast<std::size_t>(i) * w->value.numel() + j];
      dr += w->value[j] * real->value[static_cast<std::size_t>(i) * w->value.numel() + j];
    }
    mf += df;
    mr += dr;
  }
  EXPECT_NEAR(scalar_value(parts.wasserstein), (mf - mr) / 4.0, 1e-10);
  EXPECT_NEAR(scalar_value(parts.total),
              scalar_value(parts.wasserstein) + 10.0 * scalar_value(parts.penalty), 1e-10);

  // Unit-norm critic: zero penalty.
  for (std::size_t i = 0; i < w->value.numel(); ++i) w->value[i] /= wn;
  auto unit = adv_loss_critic_parts<double>(d, real, fake, eps, 10.0);
  EXPECT_NEAR(scalar_value(unit.penalty), 0.0, 1e-9);
}

TEST(AdvLoss, CriticZeroWeightsRealEqualsFake) {
  Rng rng(61);
  auto w = make_leaf<double>(Tensor<double>({1, 3, 3, 3}, 0.0));
  CriticFn<double> d = [&](const Var<double>& x) { return conv2d(x, w, 1, 0); };
  auto img = make_const(rand_img(rng, 2, 3, 5, 5));
  Tensor<double> eps({2});
  eps[0] = 0.3;
  eps[1] = 0.8;
  auto total = adv_loss_critic<double>(d, img, img, eps, 10.0);
  EXPECT_NEAR(scalar_value(total), 10.0, 1e-4);
}

TEST(AdvLoss, CriticGradcheckWithPenalty) {
  Rng rng(62);
  auto w1 = rand_leaf(rng, {2, 3, 3, 3}, -0.4, 0.4);
  auto w2 = rand_leaf(rng, {1, 2, 3, 3}, -0.4, 0.4);
  CriticFn<double> d = [&](const Var<double>& x) {
    return conv2d(leaky_relu(conv2d(x, w1, 1, 0), 0.2), w2, 1, 0);
  };
  auto real = make_const(rand_img(rng, 2, 3, 6, 6));
  auto fake = make_const(rand_img(rng, 2, 3, 6, 6));
  Tensor<double> eps({2});
  eps[0] = 0.25;
  eps[1] = 0.75;
  auto build = [&] { return adv_loss_critic<double>(d, real, fake, eps, 10.0); };
  expect_gradients_match(build, {w1, w2}, 1e-5, 2e-5);
}

TEST(CyclicLoss, CasesAndOracle) {
  Rng rng(63);
  auto x = make_const(rand_img(rng, 1, 3, 4, 4));
  EXPECT_EQ(scalar_value(cyclic_loss(x, x)), 0.0);

  Tensor<double> shifted = x->value;
  for (std::size_t i = 0; i < shifted.numel(); ++i) shifted[i] += 0.5;
  EXPECT_NEAR(scalar_value(cyclic_loss(x, make_const<double>(shifted))), 0.5, 1e-12);

  for (int it = 0; it < 100; ++it) {
    int h = 1 + static_cast<int>(rng.uniform_int(5));
    int w = 1 + static_cast<int>(rng.uniform_int(5));
    auto a = rand_img(rng, 1, 2, h, w);
    auto b = rand_img(rng, 1, 2, h, w);
    double acc = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += std::abs(a[i] - b[i]);
    acc /= static_cast<double>(a.numel());
    EXPECT_NEAR(scalar_value(cyclic_loss(make_const<double>(a), make_const<double>(b))), acc,
                1e-12);
  }
}

TEST(CyclicLoss, GradcheckAwayFromTies) {
  Rng rng(64);
  auto a = rand_leaf(rng, {1, 2, 3, 3}, 0.5, 1.0);
  auto b = make_const(rand_tensor(rng, {1, 2, 3, 3}, -1.0, -0.5));  // gap keeps signs fixed
  auto build = [&] { return cyclic_loss(a, b); };
  expect_gradients_match(build, {a});
}

TEST(CstLoss, Composition) {
  auto c = [](double v) { return make_const<double>(Tensor<double>::scalar(v)); };
  LossWeights w;
  w.adv = 1.3;
  w.style = 2.5;
  w.cyclic = 0.8;
  auto total = cst_loss<double>(c(0.2), c(-0.4), c(1.1), c(0.6), c(0.05), c(0.07), w);
  double want = 1.3 * (0.2 - 0.4) + 2.5 * (1.1 + 0.6) + 0.8 * (0.05 + 0.07);
  EXPECT_NEAR(scalar_value(total), want, 1e-10);

  LossWeights zero;
  zero.adv = zero.style = zero.cyclic = 0;
  EXPECT_EQ(scalar_value(cst_loss<double>(c(0.2), c(-0.4), c(1.1), c(0.6), c(0.05), c(0.07), zero)),
            0.0);

  LossWeights only_cyc;
  only_cyc.adv = only_cyc.style = 0;
  only_cyc.cyclic = 1;
  EXPECT_NEAR(scalar_value(cst_loss<double>(c(9), c(9), c(9), c(9), c(0.05), c(0.07), only_cyc)),
              0.12, 1e-12);
}

TEST(CrossEntropy, AnalyticAnchors) {
  // One-hot-correct prediction: exactly zero.
  Tensor<std::uint8_t> labels({1, 2, 2});
  labels[0] = 0; labels[1] = 1; labels[2] = 2; labels[3] = 1;
  Tensor<double> p({1, 3, 2, 2}, 0.0);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      p.at(0, labels[static_cast<std::size_t>(y) * 2 + x], y, x) = 1.0;
  EXPECT_EQ(scalar_value(cross_entropy(make_const<double>(p), labels)), 0.0);

  // Uniform prediction: H*W*ln K.
  const int h = 8, w = 16, k = 5;
  Tensor<std::uint8_t> lab2({1, h, w});
  Rng rng(65);
  for (std::size_t i = 0; i < lab2.numel(); ++i)
    lab2[i] = static_cast<std::uint8_t>(rng.uniform_int(k));
  Tensor<double> uni({1, k, h, w}, 1.0 / k);
  EXPECT_NEAR(scalar_value(cross_entropy(make_const<double>(uni), lab2)),
              h * w * std::log(static_cast<double>(k)), 1e-9);
}

TEST(CrossEntropy, OracleLoopAndNonNegativity) {
  Rng rng(66);
  for (int it = 0; it < 100; ++it) {
    int k = 2 + static_cast<int>(rng.uniform_int(3));
    Tensor<std::uint8_t> labels({1, 2, 2});
    for (std::size_t i = 0; i < 4; ++i)
      labels[i] = static_cast<std::uint8_t>(rng.uniform_int(k));
    Tensor<double> p({1, k, 2, 2});
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        double s = 0;
        for (int c = 0; c < k; ++c) {
          p.at(0, c, y, x) = 0.05 + rng.uniform();
          s += p.at(0, c, y, x);
        }
        for (int c = 0; c < k; ++c) p.at(0, c, y, x) /= s;
      }
    double want = 0;
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x)
        want -= std::log(p.at(0, labels[static_cast<std::size_t>(y) * 2 + x], y, x));
    double got = scalar_value(cross_entropy(make_const<double>(p), labels));
    ASSERT_NEAR(got, want, 1e-12);
    ASSERT_GE(got, 0.0);
  }
}

TEST(CrossEntropy, ClampFlagOnDegenerate) {
  Tensor<std::uint8_t> labels({1, 1, 1});
  labels[0] = 0;
  Tensor<double> p({1, 2, 1, 1});
  p[0] = 0.0;  // exact zero at the labeled class
  p[1] = 1.0;
  bool flag = false;
  auto v = scalar_value(cross_entropy(make_const<double>(p), labels, &flag));
  EXPECT_TRUE(flag);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(v, -std::log(1e-12), 1e-6);

  p[0] = 0.4;
  p[1] = 0.6;
  cross_entropy(make_const<double>(p), labels, &flag);
  EXPECT_FALSE(flag);
  labels[0] = 7;
  EXPECT_THROW(cross_entropy(make_const<double>(p), labels), DataError);
}

TEST(CrossEntropy, GradcheckOnProbabilities) {
  Rng rng(67);
  auto p = rand_leaf(rng, {1, 3, 2, 2}, 0.2, 1.0);
  Tensor<std::uint8_t> labels({1, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) labels[i] = static_cast<std::uint8_t>(rng.uniform_int(3));
  auto build = [&] { return cross_entropy(p, labels); };
  expect_gradients_match(build, {p});
}

TEST(CeMeanLogits, IgnoreMaskAndGradcheck) {
  Rng rng(68);
  auto logits = rand_leaf(rng, {1, 3, 2, 3}, -2.0, 2.0);
  Tensor<std::uint8_t> labels({1, 2, 3});
  for (std::size_t i = 0; i < 6; ++i) labels[i] = static_cast<std::uint8_t>(rng.uniform_int(3));
  labels[1] = 255;  // ignored
  auto build = [&] { return ce_mean_logits(logits, labels); };
  expect_gradients_match(build, {logits});

  Tensor<std::uint8_t> all_ignored({1, 2, 3}, 255);
  EXPECT_THROW(ce_mean_logits(logits, all_ignored), ArgError);
}

TEST(LabelLoss, SitReachesGeneratorAndSegmentor) {
  MultiScaleModel<float> model;
  model.spec = ScaleSpec::make(1, 0.5, 16, 16);
  model.width = 8;
  model.seed = 71;
  model.append_scale();
  model.train_only(1);
  Rng rng(72);
  SegmentorNet<float> seg(4, rng);

  Tensor<float> top({1, 3, 16, 16});
  for (std::size_t i = 0; i < top.numel(); ++i) top[i] = static_cast<float>(rng.uniform(-1, 1));
  Tensor<std::uint8_t> labels({1, 16, 16});
  for (std::size_t i = 0; i < labels.numel(); ++i)
    labels[i] = static_cast<std::uint8_t>(rng.uniform_int(4));
  std::vector<Var<float>> pyr{make_const<float>(top)};

  auto loss_value = [&] {
    auto st = model.sit_chain(pyr, 1);
    return scalar_value(label_loss_sit(st.back(), labels, seg));
  };
  double base = loss_value();
  auto& gw = model.quad(1).g_st.stack.convs[0].w;
  float orig = gw->value[0];
  gw->value[0] = orig + 1e-2f;
  EXPECT_GT(std::abs(loss_value() - base), 0.0);
  gw->value[0] = orig;

  auto st = model.sit_chain(pyr, 1);
  auto loss = label_loss_sit(st.back(), labels, seg);
  auto gs = grad(loss, {gw, seg.head.w});
  double n_g = 0, n_s = 0;
  for (std::size_t i = 0; i < gs[0]->value.numel(); ++i) n_g += std::abs(gs[0]->value[i]);
  for (std::size_t i = 0; i < gs[1]->value.numel(); ++i) n_s += std::abs(gs[1]->value[i]);
  EXPECT_GT(n_g, 0.0);
  EXPECT_GT(n_s, 0.0);
}

TEST(LabelLoss, CyclicLeavesFrozenSegmentorAlone) {
  MultiScaleModel<float> model;
  model.spec = ScaleSpec::make(1, 0.5, 16, 16);
  model.width = 8;
  model.seed = 73;
  model.append_scale();
  model.train_only(1);
  Rng rng(74);
  SegmentorNet<float> seg_s(4, rng);
  set_trainable<float>(seg_s, false);
  auto seg_before = net_param_bytes<float>(seg_s);

  Tensor<float> top({1, 3, 16, 16});
  for (std::size_t i = 0; i < top.numel(); ++i) top[i] = static_cast<float>(rng.uniform(-1, 1));
  Tensor<std::uint8_t> labels({1, 16, 16});
  for (std::size_t i = 0; i < labels.numel(); ++i)
    labels[i] = static_cast<std::uint8_t>(rng.uniform_int(4));
  std::vector<Var<float>> pyr{make_const<float>(top)};

  auto [fwd, back] = model.cycle_source(pyr, 1);
  (void)fwd;
  auto loss = label_loss_cyclic(back.back(), labels, seg_s);
  auto& w_st = model.quad(1).g_st.stack.convs[0].w;
  auto& w_ts = model.quad(1).g_ts.stack.convs[0].w;
  auto gs = grad(loss, {w_st, w_ts, seg_s.head.w});
  double n_st = 0, n_ts = 0, n_seg = 0;
  for (std::size_t i = 0; i < gs[0]->value.numel(); ++i) n_st += std::abs(gs[0]->value[i]);
  for (std::size_t i = 0; i < gs[1]->value.numel(); ++i) n_ts += std::abs(gs[1]->value[i]);
  for (std::size_t i = 0; i < gs[2]->value.numel(); ++i) n_seg += std::abs(gs[2]->value[i]);
  EXPECT_GT(n_st, 0.0);
  EXPECT_GT(n_ts, 0.0);
  EXPECT_EQ(n_seg, 0.0);
  EXPECT_EQ(net_param_bytes<float>(seg_s), seg_before);
}

TEST(LastScaleLoss, CompositionAndGuard) {
  auto c = [](double v) { return make_const<double>(Tensor<double>::scalar(v)); };
  LossWeights w;
  auto total = last_scale_loss<double>(c(1.5), c(0.3), c(0.2), w, 3, 3);
  EXPECT_NEAR(scalar_value(total), 1.5 + 3.0 * (0.3 + 0.2), 1e-10);

  LossWeights no_labels;
  no_labels.labels = 0;
  EXPECT_EQ(scalar_value(last_scale_loss<double>(c(1.5), c(9), c(9), no_labels, 2, 2)), 1.5);

  EXPECT_THROW(last_scale_loss<double>(c(1), c(1), c(1), w, 1, 3), ArgError);
}
