#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "procst/model/checkpoint.hpp"
#include "procst/model/multiscale.hpp"
#include "procst/nn/feature_extractor.hpp"

using namespace procst;
namespace fs = std::filesystem;

namespace {

MultiScaleModel<float> tiny_model(int n_scales, int top_h, int top_w, int width = 8,
                                  std::uint64_t seed = 303, int bpd = 8) {
  MultiScaleModel<float> m;
  m.spec = ScaleSpec::make(n_scales, 0.5, top_h, top_w);
  m.width = width;
  m.batch_per_device = bpd;
  m.seed = seed;
  m.extractor_seed = kDefaultExtractorSeed;
  for (int i = 0; i < n_scales; ++i) m.append_scale();
  return m;
}

std::vector<Var<float>> const_pyramid(Rng& rng, const ScaleSpec& spec, int b) {
  Tensor<float> top({b, 3, spec.top_h, spec.top_w});
  for (std::size_t i = 0; i < top.numel(); ++i) top[i] = static_cast<float>(rng.uniform(-1, 1));
  std::vector<Var<float>> pyr;
  for (auto& level : pyramid_batch(top, spec)) pyr.push_back(make_const<float>(std::move(level)));
  return pyr;
}

void zero_final_layer(GeneratorNet<float>& g) {
  auto& last = g.stack.convs.back();
  last.w->value.fill(0.0f);
  last.b->value.fill(0.0f);
}

}  // namespace

TEST(InitScale, NormModeRule) {
  auto spec = ScaleSpec::make(2, 0.5, 32, 32);
  auto q_batch = init_scale<float>(spec, 1, 32, 16, 1);
  EXPECT_EQ(q_batch.g_st.norm, NormMode::batch);
  auto q_group = init_scale<float>(spec, 1, 4, 16, 1);
  EXPECT_EQ(q_group.g_st.norm, NormMode::group);
  auto q_edge = init_scale<float>(spec, 1, 16, 16, 1);  // "exceeds 16" is strict
  EXPECT_EQ(q_edge.g_st.norm, NormMode::group);
  EXPECT_THROW(init_scale<float>(spec, 1, 4, 12, 1), ConfigError);
  EXPECT_THROW(init_scale<float>(spec, 3, 8, 16, 1), ArgError);
}

TEST(InitScale, SeedDeterminism) {
  auto spec = ScaleSpec::make(2, 0.5, 32, 32);
  auto a = init_scale<float>(spec, 2, 8, 8, 77);
  auto b = init_scale<float>(spec, 2, 8, 8, 77);
  auto c = init_scale<float>(spec, 2, 8, 8, 78);
  auto bytes = [](ScaleQuad<float>& q) {
    std::vector<float> v;
    q.visit("", [&](const std::string&, Var<float>& p) {
      v.insert(v.end(), p->value.data(), p->value.data() + p->value.numel());
    });
    return v;
  };
  EXPECT_EQ(bytes(a), bytes(b));
  EXPECT_NE(bytes(a), bytes(c));
}

TEST(InitScale, DepthRule) {
  auto spec = ScaleSpec::make(3, 0.5, 64, 128);
  auto q1 = init_scale<float>(spec, 1, 8, 8, 5);
  auto q2 = init_scale<float>(spec, 2, 8, 8, 5);
  EXPECT_EQ(q1.g_st.stack.convs.size(), 5u);
  EXPECT_EQ(q2.g_st.stack.convs.size(), 7u);
  EXPECT_EQ(q1.d_ts.stack.convs.size(), 5u);
  EXPECT_EQ(q2.d_ts.stack.convs.size(), 7u);
  EXPECT_EQ(q1.g_st.stack.convs[0].ci, 3);
  EXPECT_EQ(q2.g_st.stack.convs[0].ci, 6);
  EXPECT_EQ(q2.g_st.stack.convs.back().co, 3);
}

TEST(Chain, GeometryAtPaperScales) {
  auto model = tiny_model(3, 64, 128);
  EXPECT_EQ(scale_dims(1, model.spec), (std::pair{16, 32}));
  EXPECT_EQ(scale_dims(2, model.spec), (std::pair{32, 64}));
  EXPECT_EQ(scale_dims(3, model.spec), (std::pair{64, 128}));
  Rng rng(1);
  auto pyr = const_pyramid(rng, model.spec, 2);
  auto outs = model.sit_chain(pyr, 3);
  ASSERT_EQ(outs.size(), 3u);
  EXPECT_EQ(outs[0]->value.shape(), (std::vector<int>{2, 3, 16, 32}));
  EXPECT_EQ(outs[1]->value.shape(), (std::vector<int>{2, 3, 32, 64}));
  EXPECT_EQ(outs[2]->value.shape(), (std::vector<int>{2, 3, 64, 128}));
}

TEST(Chain, PrefixConsistency) {
  auto model = tiny_model(3, 32, 64);
  Rng rng(2);
  auto pyr = const_pyramid(rng, model.spec, 1);
  auto full = model.sit_chain(pyr, 3);
  for (int k = 1; k <= 3; ++k) {
    auto part = model.sit_chain(pyr, k);
    const auto& a = full[static_cast<std::size_t>(k - 1)]->value;
    const auto& b = part.back()->value;
    ASSERT_TRUE(a.same_shape(b));
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], b[i]) << "scale " << k;
  }
}

TEST(Chain, OutputRange) {
  auto model = tiny_model(3, 32, 64);
  Rng rng(3);
  auto pyr = const_pyramid(rng, model.spec, 2);
  for (auto& out : model.sit_chain(pyr, 3))
    for (std::size_t i = 0; i < out->value.numel(); ++i) {
      ASSERT_GE(out->value[i], -1.0f);
      ASSERT_LE(out->value[i], 1.0f);
    }
}

TEST(Chain, ZeroFinalLayersReduceToUpsample) {
  auto model = tiny_model(3, 32, 64);
  for (int n = 2; n <= 3; ++n) zero_final_layer(model.quad(n).g_st);
  Rng rng(4);
  auto pyr = const_pyramid(rng, model.spec, 1);
  auto outs = model.sit_chain(pyr, 3);
  auto ref = model.sit_chain(pyr, 1).back();
  for (int k = 2; k <= 3; ++k) {
    auto [h, w] = scale_dims(k, model.spec);
    ref = tanh_v(upsample_bilinear(ref, h, w));
    const auto& a = outs[static_cast<std::size_t>(k - 1)]->value;
    for (std::size_t i = 0; i < a.numel(); ++i) ASSERT_EQ(a[i], ref->value[i]) << "scale " << k;
  }
}

TEST(Chain, ShapeErrorCarriesScaleIndex) {
  auto model = tiny_model(2, 32, 64);
  Rng rng(5);
  auto pyr = const_pyramid(rng, model.spec, 1);
  std::swap(pyr[0], pyr[1]);
  try {
    model.sit_chain(pyr, 2);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("scale 1"), std::string::npos);
  }
}

TEST(Cycle, ReverseConsumesIntermediates) {
  auto model = tiny_model(2, 32, 64);
  Rng rng(6);
  auto pyr = const_pyramid(rng, model.spec, 1);
  auto [fwd, back] = model.cycle_source(pyr, 2);
  ASSERT_EQ(back.size(), 2u);
  // Reverse chain base must be g_ts applied to the INTERMEDIATE t1, not to a
  // downscale of the final t2.
  auto expect_base = model.quad(1).g_ts.forward_base(fwd[0], false);
  for (std::size_t i = 0; i < expect_base->value.numel(); ++i)
    ASSERT_EQ(back[0]->value[i], expect_base->value[i]);
  EXPECT_EQ(back[1]->value.shape(), (std::vector<int>{1, 3, 32, 64}));
}

TEST(Cycle, GradientReachesBothGenerators) {
  auto model = tiny_model(2, 16, 16);
  model.train_only(2);
  Rng rng(7);
  auto pyr = const_pyramid(rng, model.spec, 1);

  auto loss_value = [&] {
    auto [fwd, back] = model.cycle_source(pyr, 2);
    return scalar_value(mean_abs(back.back(), pyr.back()));
  };
  double base = loss_value();

  auto& w_st = model.quad(2).g_st.stack.convs[0].w;
  auto& w_ts = model.quad(2).g_ts.stack.convs[0].w;
  float orig_st = w_st->value[0];
  w_st->value[0] = orig_st + 1e-2f;
  double d_st = std::abs(loss_value() - base);
  w_st->value[0] = orig_st;
  float orig_ts = w_ts->value[0];
  w_ts->value[0] = orig_ts + 1e-2f;
  double d_ts = std::abs(loss_value() - base);
  w_ts->value[0] = orig_ts;
  EXPECT_GT(d_st, 0.0);
  EXPECT_GT(d_ts, 0.0);

  auto [fwd, back] = model.cycle_source(pyr, 2);
  auto loss = mean_abs(back.back(), pyr.back());
  auto gs = grad(loss, {w_st, w_ts});
  double n_st = 0, n_ts = 0;
  for (std::size_t i = 0; i < gs[0]->value.numel(); ++i) n_st += std::abs(gs[0]->value[i]);
  for (std::size_t i = 0; i < gs[1]->value.numel(); ++i) n_ts += std::abs(gs[1]->value[i]);
  EXPECT_GT(n_st, 0.0);
  EXPECT_GT(n_ts, 0.0);
}

TEST(Discriminator, ShapeOracleAndDeterminism) {
  auto spec = ScaleSpec::make(2, 0.5, 32, 64);
  auto q1 = init_scale<float>(spec, 1, 8, 8, 9);
  auto q2 = init_scale<float>(spec, 2, 8, 8, 9);
  Rng rng(8);
  Tensor<float> img1({2, 3, 16, 32});
  for (std::size_t i = 0; i < img1.numel(); ++i) img1[i] = static_cast<float>(rng.uniform(-1, 1));
  auto v1 = make_const<float>(img1);
  auto map1 = discriminate(q1.d_st, v1);
  int h = 16, w = 32;
  for (std::size_t i = 0; i < q1.d_st.stack.convs.size(); ++i) {
    h = conv_out_dim(h, 3, 1, 0);
    w = conv_out_dim(w, 3, 1, 0);
  }
  EXPECT_EQ(map1->value.shape(), (std::vector<int>{2, 1, h, w}));

  Tensor<float> img2({1, 3, 32, 64});
  auto map2 = discriminate(q2.d_ts, make_const<float>(img2));
  EXPECT_EQ(map2->value.shape(), (std::vector<int>{1, 1, 32 - 14, 64 - 14}));

  auto again = discriminate(q1.d_st, v1);
  for (std::size_t i = 0; i < map1->value.numel(); ++i)
    ASSERT_EQ(map1->value[i], again->value[i]);

  q1.d_st.visit("", [](const std::string&, Var<float>& v) { v->value.fill(0.0f); });
  auto zmap = discriminate(q1.d_st, v1);
  for (std::size_t i = 0; i < zmap->value.numel(); ++i) ASSERT_EQ(zmap->value[i], 0.0f);
}

TEST(Model, FrozenEvalNeverMutates) {
  for (int bpd : {8, 32}) {
    auto model = tiny_model(2, 32, 64, 8, 11, bpd);
    Rng rng(9);
    auto pyr = const_pyramid(rng, model.spec, 1);
    std::vector<std::vector<float>> before;
    for (int n = 1; n <= 2; ++n) before.push_back(scale_param_bytes(model, n));
    model.cycle_source(pyr, 2);
    model.cycle_target(pyr, 2);
    discriminate(model.quad(2).d_st, pyr[1]);
    for (int n = 1; n <= 2; ++n) EXPECT_EQ(before[static_cast<std::size_t>(n - 1)],
                                           scale_param_bytes(model, n));
  }
}

TEST(Checkpoint, RoundTripBitwise) {
  auto dir = fs::temp_directory_path() / "procst_ckpt";
  fs::create_directories(dir);
  auto model = tiny_model(2, 32, 64);
  model.train_only(2);
  // Touch running stats so buffer blocks carry non-default data.
  model.quad(1).g_st.stack.norms[0].running_mean.fill(0.25f);
  auto p1 = dir / "a.ckpt";
  auto p2 = dir / "b.ckpt";
  save_checkpoint(model, p1);
  auto loaded = load_checkpoint<float>(p1);
  EXPECT_EQ(loaded.num_initialized(), 2);
  EXPECT_EQ(loaded.width, model.width);
  EXPECT_TRUE(loaded.scale_training(2));
  EXPECT_FALSE(loaded.scale_training(1));
  EXPECT_EQ(loaded.quad(1).g_st.stack.norms[0].running_mean[0], 0.25f);
  save_checkpoint(loaded, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  EXPECT_EQ(b1, b2);
  ASSERT_FALSE(b1.empty());
}

TEST(Checkpoint, VersionAndIntegrityErrors) {
  auto dir = fs::temp_directory_path() / "procst_ckpt";
  fs::create_directories(dir);
  auto model = tiny_model(1, 32, 64);
  auto good = dir / "good.ckpt";
  save_checkpoint(model, good);

  std::ifstream in(good, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  in.close();

  auto bad_version = dir / "bad_version.ckpt";
  {
    std::string v = bytes;
    v[8] = 99;  // little-endian u32 version field
    std::ofstream os(bad_version, std::ios::binary);
    os.write(v.data(), static_cast<std::streamsize>(v.size()));
  }
  EXPECT_THROW(load_checkpoint<float>(bad_version), VersionError);

  auto truncated = dir / "trunc.ckpt";
  {
    std::ofstream os(truncated, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
  }
  EXPECT_THROW(load_checkpoint<float>(truncated), IntegrityError);

  auto not_ckpt = dir / "not.ckpt";
  {
    std::ofstream os(not_ckpt, std::ios::binary);
    os << "definitely not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint<float>(not_ckpt), IntegrityError);
  EXPECT_THROW(load_checkpoint<float>(dir / "missing.ckpt"), IntegrityError);
}

TEST(Checkpoint, SegmentorRoundTrip) {
  auto dir = fs::temp_directory_path() / "procst_ckpt";
  fs::create_directories(dir);
  Rng rng(12);
  SegmentorNet<float> seg(5, rng);
  auto path = dir / "seg.ckpt";
  save_segmentor(seg, path);
  auto back = load_segmentor<float>(path);
  EXPECT_EQ(back.num_classes, 5);
  EXPECT_EQ(net_param_bytes<float>(seg), net_param_bytes<float>(back));
}
