#include <gtest/gtest.h>

#include <cstring>
#include <set>

#include "dmgn/gradcheck.hpp"
#include "dmgn/model.hpp"
#include "oracles.hpp"

using namespace dmgn;

namespace {

template <typename T>
Tensor<T> random_image(Shape shape, uint64_t seed, T lo = T(0), T hi = T(1)) {
  Rng rng(seed);
  Tensor<T> t(std::move(shape));
  for (int i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.width = 4;
  return cfg;
}

template <typename T>
void fill_param(ParamSet<T>& p, const std::string& name, T value) {
  Tensor<T>& t = p.at(name);
  for (int i = 0; i < t.numel(); ++i) t[i] = value;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), sizeof(T) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature head

TEST(FeatureHead, OutputMatchesInputResolutionAndWidth) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 1);
  auto I = random_image<float>({2, 3, 16, 12}, 3);
  auto F = feature_head(I, p, cfg);
  EXPECT_EQ(F.shape(), (Shape{2, cfg.width, 16, 12}));
}

TEST(FeatureHead, DefaultHypercolumnHasFiftyNineChannels) {
  ModelConfig cfg;
  EXPECT_EQ(cfg.hypercolumn_channels(), 59);
}

TEST(FeatureHead, FrozenExtractorIsDeterministic) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 1);
  auto I = random_image<float>({1, 3, 8, 8}, 5);
  EXPECT_TRUE(bitwise_equal(feature_head(I, p, cfg), feature_head(I, p, cfg)));
}

TEST(FeatureHead, IndivisibleSizeRejected) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 1);
  auto I = random_image<float>({1, 3, 10, 10}, 5);
  EXPECT_THROW(feature_head(I, p, cfg), ShapeError);
}

TEST(FeatureHead, PyramidParamsAreFrozen) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 1);
  int frozen = 0, trainable = 0;
  p.for_each([&](const std::string& name, const auto& e) {
    if (name.rfind("head.pyr", 0) == 0) {
      EXPECT_FALSE(e.trainable) << name;
      ++frozen;
    } else {
      EXPECT_TRUE(e.trainable) << name;
      ++trainable;
    }
  });
  EXPECT_EQ(frozen, 2 * cfg.pyramid_levels);
  EXPECT_GT(trainable, 0);
}

// ---------------------------------------------------------------------------
// Separator

TEST(Separator, ZeroAttentionGivesHalfSplit) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 1);
  fill_param(p, "sep.att1.w", 0.0f);
  fill_param(p, "sep.att1.b", 0.0f);
  auto I = random_image<float>({1, 3, 8, 8}, 7);
  auto F = feature_head(I, p, cfg);
  auto sep = separate(F, p);
  for (int i = 0; i < F.numel(); ++i) {
    ASSERT_FLOAT_EQ(sep.map[i], 0.5f);
    ASSERT_FLOAT_EQ(sep.background[i], 0.5f * F[i]);
  }
}

TEST(Separator, SaturatedMapSendsNoiseToZero) {
  auto F = random_image<float>({1, 4, 8, 8}, 9, -1.0f, 1.0f);
  auto sep = split_by_map(F, Tensor<float>::full(F.shape(), 1.0f));
  for (int i = 0; i < F.numel(); ++i) ASSERT_FLOAT_EQ(sep.noise[i], 0.0f);
}

TEST(Separator, SplitIdentityHolds) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 2);
  auto I = random_image<float>({2, 3, 8, 8}, 11);
  auto F = feature_head(I, p, cfg);
  auto sep = separate(F, p);
  for (int i = 0; i < F.numel(); ++i)
    ASSERT_NEAR(sep.background[i] + sep.noise[i], F[i], 1e-6f);
}

// ---------------------------------------------------------------------------
// Masking cell

TEST(MaskingCell, MaskForcedToZeroIsIdentity) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 3);
  fill_param(p, "gb.enc0.cell0.m1.w", 0.0f);
  fill_param(p, "gb.enc0.cell0.m1.b", -40.0f);
  auto x = random_image<float>({1, 8, 8, 8}, 13, -1.0f, 1.0f);
  auto out = masking_cell(x, p, "gb.enc0.cell0", true, cfg);
  EXPECT_TRUE(bitwise_equal(out.value, x));
}

TEST(MaskingCell, MaskForcedToOneAddsRefinement) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 3);
  fill_param(p, "gb.enc0.cell0.m1.w", 0.0f);
  fill_param(p, "gb.enc0.cell0.m1.b", 40.0f);
  auto x = random_image<float>({1, 8, 8, 8}, 13, -1.0f, 1.0f);
  auto masked = masking_cell(x, p, "gb.enc0.cell0", true, cfg);
  auto plain = masking_cell(x, p, "gb.enc0.cell0", false, cfg);  // Y = X + H(X)
  for (int i = 0; i < x.numel(); ++i) ASSERT_NEAR(masked.value[i], plain.value[i], 1e-6f);
}

TEST(MaskingCell, MatchesPrimitiveCompositionOracle) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 5);
  const std::string c = "ref.cell0";
  auto x = random_image<float>({1, 4, 6, 6}, 17, -1.0f, 1.0f);
  auto got = masking_cell(x, p, c, true, cfg);

  auto h0 = oracle::conv2d(x, p.at(c + ".h0.w"), p.at(c + ".h0.b"), 1, 1);
  for (int i = 0; i < h0.numel(); ++i) h0[i] = std::max(0.0f, h0[i]);
  auto h = oracle::conv2d(h0, p.at(c + ".h1.w"), p.at(c + ".h1.b"), 1, 1);
  auto m0 = oracle::conv2d(h, p.at(c + ".m0.w"), p.at(c + ".m0.b"), 1, 0);
  for (int i = 0; i < m0.numel(); ++i) m0[i] = std::tanh(m0[i]);
  auto m1 = oracle::conv2d(m0, p.at(c + ".m1.w"), p.at(c + ".m1.b"), 1, 0);
  for (int i = 0; i < x.numel(); ++i) {
    const double mask = 1.0 / (1.0 + std::exp(-static_cast<double>(m1[i])));
    const double want = x[i] + mask * h[i];
    ASSERT_NEAR(got.value[i], want, 1e-6);
    ASSERT_GE(got.mask[i], 0.0f);
    ASSERT_LE(got.mask[i], 1.0f);
  }
}

TEST(MaskingCell, WidthMismatchRejected) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 3);
  auto x = random_image<float>({1, 5, 8, 8}, 13);
  EXPECT_THROW(masking_cell(x, p, "gb.enc0.cell0", true, cfg), ShapeError);
}

// ---------------------------------------------------------------------------
// Coarse generator

TEST(CoarseGenerator, ProducesUnitRangeImageOfInputSize) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 7);
  auto I = random_image<float>({2, 3, 16, 16}, 19);
  auto F = feature_head(I, p, cfg);
  auto sep = separate(F, p);
  MaskTrace<float> trace;
  auto out = coarse_generator(sep.background, p, "gb", cfg, true, &trace, "background");
  EXPECT_EQ(out.image.shape(), (Shape{2, 3, 16, 16}));
  for (int i = 0; i < out.image.numel(); ++i) {
    ASSERT_GE(out.image[i], 0.0f);
    ASSERT_LE(out.image[i], 1.0f);
  }
  EXPECT_EQ(trace.entries.size(), static_cast<size_t>(4 * cfg.stage_cells));
}

TEST(CoarseGenerator, ZeroedSkipsChangeTheOutput) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 23);
  auto I = random_image<float>({1, 3, 16, 16}, 29);
  auto F = feature_head(I, p, cfg);
  auto sep = separate(F, p);
  MaskTrace<float>* no_trace = nullptr;
  auto with = coarse_generator(sep.background, p, "gb", cfg, true, no_trace, "background", true);
  auto without =
      coarse_generator(sep.background, p, "gb", cfg, true, no_trace, "background", false);
  EXPECT_GT(oracle::l1_mean(with.image, without.image), 0.0);
}

// ---------------------------------------------------------------------------
// Channel attention

TEST(ChannelAttention, SaturatedGatesPassFeaturesThrough) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 31);
  fill_param(p, "ref.aca_b.se.fc1.w", 0.0f);
  fill_param(p, "ref.aca_b.se.fc1.b", 40.0f);  // sigmoid -> 1
  auto feat = random_image<float>({2, 4, 8, 8}, 37, -1.0f, 1.0f);
  auto out = channel_attention(feat, p, "ref.aca_b", cfg);
  EXPECT_TRUE(bitwise_equal(out, feat));
}

TEST(ChannelAttention, GatesLieInUnitInterval) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 41);
  auto feat = random_image<float>({1, 4, 8, 8}, 43, -1.0f, 1.0f);
  auto gates = sigmoid(se_preactivation(aca_normalized(feat, p, "ref.aca_b"), p, "ref.aca_b"));
  ASSERT_EQ(gates.shape(), (Shape{1, 4}));
  for (int i = 0; i < gates.numel(); ++i) {
    ASSERT_GE(gates[i], 0.0f);
    ASSERT_LE(gates[i], 1.0f);
  }
}

TEST(ChannelAttention, PooledPreactivationMonotoneUnderNonnegativeWeights) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 47);
  for (const char* name : {"ref.aca_b.se.fc0.w", "ref.aca_b.se.fc1.w"}) {
    Tensor<float>& w = p.at(name);
    for (int i = 0; i < w.numel(); ++i) w[i] = std::abs(w[i]);
  }
  fill_param(p, "ref.aca_b.se.fc0.b", 0.0f);
  fill_param(p, "ref.aca_b.se.fc1.b", 0.0f);

  Rng rng(53);
  for (int trial = 0; trial < 20; ++trial) {
    auto normalized = random_image<float>({1, 4, 4, 4}, 100 + trial, 0.0f, 1.0f);
    const int channel = rng.uniform_int(0, 3);
    auto boosted = normalized.clone();
    for (int i = 0; i < 16; ++i) boosted[channel * 16 + i] *= 2.0f;
    auto z0 = se_preactivation(normalized, p, "ref.aca_b");
    auto z1 = se_preactivation(boosted, p, "ref.aca_b");
    ASSERT_GE(z1[channel], z0[channel] - 1e-7f) << "trial " << trial;
  }
}

// ---------------------------------------------------------------------------
// Noise distribution map

TEST(NoiseDistribution, ZeroAttentionGivesHalfMaps) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 59);
  fill_param(p, "ref.ndm1.w", 0.0f);
  fill_param(p, "ref.ndm1.b", 0.0f);
  auto a = random_image<float>({1, 4, 8, 8}, 61);
  auto b = random_image<float>({1, 4, 8, 8}, 67);
  auto ndm = noise_distribution(a, b, p);
  for (int i = 0; i < ndm.noise_map.numel(); ++i) {
    ASSERT_FLOAT_EQ(ndm.noise_map[i], 0.5f);
    ASSERT_FLOAT_EQ(ndm.background_map[i], 0.5f);
  }
}

TEST(NoiseDistribution, MapsSumToOne) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 71);
  auto a = random_image<float>({2, 4, 8, 8}, 73);
  auto b = random_image<float>({2, 4, 8, 8}, 79);
  auto ndm = noise_distribution(a, b, p);
  EXPECT_EQ(ndm.noise_map.shape(), (Shape{2, 1, 8, 8}));
  for (int i = 0; i < ndm.noise_map.numel(); ++i)
    ASSERT_FLOAT_EQ(ndm.noise_map[i] + ndm.background_map[i], 1.0f);
}

TEST(NoiseDistribution, DeterministicGivenParams) {
  ModelConfig cfg = tiny_config();
  auto p = build_model_params<float>(cfg, VariantSpec::from_name("full"), 83);
  auto a = random_image<float>({1, 4, 8, 8}, 89);
  auto b = random_image<float>({1, 4, 8, 8}, 97);
  EXPECT_TRUE(
      bitwise_equal(noise_distribution(a, b, p).noise_map, noise_distribution(a, b, p).noise_map));
}

// ---------------------------------------------------------------------------
// Mask fusion

TEST(FuseMask, ZeroStrengthIsIdentity) {
  auto m = random_image<double>({1, 2, 4, 4}, 101);
  auto ab = random_image<double>({1, 2, 4, 4}, 103);
  auto fused = fuse_mask(m, ab, 3, 0.0, 0.9);
  EXPECT_TRUE(bitwise_equal(fused, m));
}

TEST(FuseMask, HandAlgebraExample) {
  auto m = Tensor<double>::full({1, 1, 1, 1}, 0.5);
  auto ab = Tensor<double>::full({1, 1, 1, 1}, 1.0);
  EXPECT_NEAR(fuse_mask(m, ab, 1, 1.0, 0.9)[0], 0.75, 1e-15);
}

TEST(FuseMask, GeometricDecayOfPullTowardMap) {
  const double alpha = 1.0, q = 0.5, m = 0.2, ab = 0.9;
  auto mt = Tensor<double>::full({1}, m);
  auto at = Tensor<double>::full({1}, ab);
  double prev = 1.0;
  for (int n = 1; n <= 6; ++n) {
    const double fused = fuse_mask(mt, at, n, alpha, q)[0];
    const double c = alpha * std::pow(q, n - 1);
    const double closed_form = c * std::abs(ab - m) / (1.0 + c);
    EXPECT_NEAR(std::abs(fused - m), closed_form, 1e-12) << "n=" << n;
    EXPECT_LE(std::abs(fused - m), std::pow(q, n - 1) * std::abs(ab - m) + 1e-12);
    EXPECT_LT(std::abs(fused - m), prev) << "n=" << n;
    prev = std::abs(fused - m);
  }
}

TEST(FuseMask, StaysInUnitInterval) {
  Rng rng(107);
  for (int i = 0; i < 1000; ++i) {
    auto m = Tensor<double>::full({1}, rng.uniform());
    auto ab = Tensor<double>::full({1}, rng.uniform());
    const double f = fuse_mask(m, ab, rng.uniform_int(1, 6), rng.uniform(), rng.uniform())[0];
    ASSERT_GE(f, 0.0);
    ASSERT_LE(f, 1.0);
  }
}

// ---------------------------------------------------------------------------
// Refiner and full forward

TEST(Refine, ZeroFusionStrengthEqualsUnregularizedRefiner) {
  ModelConfig cfg = tiny_config();
  cfg.alpha_fuse = 0.0;
  auto v = VariantSpec::from_name("r-rdmc");
  auto p = build_model_params<float>(cfg, v, 109);
  auto I = random_image<float>({1, 3, 8, 8}, 113);

  auto with_ndm = dmgn_forward(I, p, cfg, v);
  VariantSpec no_ndm = v;
  no_ndm.ndm = false;
  auto without = dmgn_forward(I, p, cfg, no_ndm);
  EXPECT_TRUE(bitwise_equal(with_ndm.refined_background, without.refined_background));
}

TEST(Refine, DroppedNoiseStreamMatchesManualAssembly) {
  // The aca-disabled path must assemble its source as
  // concat(F_b, zeros, head(B_coarse)) over the same parameters.
  ModelConfig cfg = tiny_config();
  auto v = VariantSpec::from_name("r-rdmc");
  auto p = build_model_params<float>(cfg, v, 127);
  auto I = random_image<float>({1, 3, 8, 8}, 131);

  auto out = dmgn_forward(I, p, cfg, v);

  auto F = feature_head(I, p, cfg);
  auto sep = separate(F, p);
  MaskTrace<float> trace;
  auto bc = coarse_generator(sep.background, p, "gb", cfg, true, &trace, "background").image;
  auto r = coarse_generator(sep.noise, p, "gr", cfg, true, &trace, "noise").image;
  Tensor<float> zeros_stream(sep.background.shape());
  auto e = concat_channels({sep.background, zeros_stream, feature_head(bc, p, cfg)});
  auto x = relu(conv2d(e, p.at("ref.proj.w"), p.at("ref.proj.b"), 1, 1));
  auto ndm = noise_distribution(F, feature_head(r, p, cfg), p);
  auto ab = repeat_channels(ndm.background_map, cfg.width);
  for (int n = 1; n <= cfg.refine_cells; ++n)
    x = masking_cell(x, p, "ref.cell" + std::to_string(n - 1), true, cfg, &ab, n).value;
  auto want = sigmoid(conv2d(x, p.at("ref.out.w"), p.at("ref.out.b"), 1, 1));
  EXPECT_TRUE(bitwise_equal(out.refined_background, want));
}

TEST(Forward, AllVariantsProduceUnitRangeImages) {
  ModelConfig cfg = tiny_config();
  auto I = random_image<float>({1, 3, 8, 8}, 137);
  for (const char* name : {"base", "rdmc", "r-rdmc", "coarse", "full"}) {
    auto v = VariantSpec::from_name(name);
    auto p = build_model_params<float>(cfg, v, 139);
    auto out = dmgn_forward(I, p, cfg, v);
    EXPECT_EQ(out.coarse_background.shape(), I.shape()) << name;
    EXPECT_EQ(out.noise.shape(), I.shape()) << name;
    EXPECT_EQ(out.refined_background.shape(), I.shape()) << name;
    for (int i = 0; i < out.refined_background.numel(); ++i) {
      ASSERT_GE(out.refined_background[i], 0.0f);
      ASSERT_LE(out.refined_background[i], 1.0f);
    }
    for (const auto& entry : out.trace.entries)
      for (int i = 0; i < entry.mask.numel(); ++i) {
        ASSERT_GE(entry.mask[i], 0.0f);
        ASSERT_LE(entry.mask[i], 1.0f);
      }
  }
}

TEST(Forward, BaseVariantRecordsNoMasks) {
  ModelConfig cfg = tiny_config();
  auto v = VariantSpec::from_name("base");
  auto p = build_model_params<float>(cfg, v, 149);
  auto out = dmgn_forward(random_image<float>({1, 3, 8, 8}, 151), p, cfg, v);
  EXPECT_TRUE(out.trace.entries.empty());
}

TEST(Forward, CoarseVariantEmitsCoarseOutput) {
  ModelConfig cfg = tiny_config();
  auto v = VariantSpec::from_name("coarse");
  auto p = build_model_params<float>(cfg, v, 157);
  auto out = dmgn_forward(random_image<float>({1, 3, 8, 8}, 163), p, cfg, v);
  EXPECT_TRUE(bitwise_equal(out.refined_background, out.coarse_background));
}

TEST(Forward, DeterministicAcrossRuns) {
  ModelConfig cfg = tiny_config();
  auto v = VariantSpec::from_name("full");
  auto p = build_model_params<float>(cfg, v, 167);
  auto I = random_image<float>({1, 3, 8, 8}, 173);
  auto a = dmgn_forward(I, p, cfg, v);
  auto b = dmgn_forward(I, p, cfg, v);
  EXPECT_TRUE(bitwise_equal(a.refined_background, b.refined_background));
  EXPECT_TRUE(bitwise_equal(a.noise, b.noise));
}

TEST(Forward, FullVsRRdmcParamDiffIsExactlyChannelAttention) {
  ModelConfig cfg = tiny_config();
  auto pf = build_model_params<float>(cfg, VariantSpec::from_name("full"), 179);
  auto pr = build_model_params<float>(cfg, VariantSpec::from_name("r-rdmc"), 179);
  std::set<std::string> full_names(pf.order.begin(), pf.order.end());
  std::set<std::string> r_names(pr.order.begin(), pr.order.end());
  for (const auto& n : r_names) EXPECT_TRUE(full_names.count(n)) << n;
  for (const auto& n : full_names)
    if (!r_names.count(n)) EXPECT_EQ(n.rfind("ref.aca_", 0), 0u) << n;
  EXPECT_GT(full_names.size(), r_names.size());
}

TEST(Forward, MaskSurgeryMakesEveryCellAnIdentity) {
  ModelConfig cfg = tiny_config();
  auto v = VariantSpec::from_name("full");
  auto p = build_model_params<float>(cfg, v, 181);
  std::vector<std::string> cell_prefixes;
  p.for_each([&](const std::string& name, auto&) {
    const auto pos = name.find(".m1.b");
    if (pos != std::string::npos) cell_prefixes.push_back(name.substr(0, pos));
  });
  ASSERT_FALSE(cell_prefixes.empty());
  for (const auto& c : cell_prefixes) {
    fill_param(p, c + ".m1.w", 0.0f);
    fill_param(p, c + ".m1.b", -40.0f);
    const int width = p.at(c + ".h0.w").dim(1);
    auto x = random_image<float>({1, width, 8, 8}, 191, -1.0f, 1.0f);
    auto out = masking_cell(x, p, c, true, cfg);
    EXPECT_TRUE(bitwise_equal(out.value, x)) << c;
  }
}

TEST(Forward, FullPassGradientsMatchFiniteDifferences) {
  ModelConfig cfg = tiny_config();  // C=4, 8x8: the pinned gradcheck scale
  auto v = VariantSpec::from_name("full");
  auto p = build_model_params<double>(cfg, v, 193);
  auto I0 = random_image<double>({1, 3, 8, 8}, 197);

  // d loss / d input over every input coordinate
  auto by_input = [&](const Tensor<double>& I) {
    return mean_all(dmgn_forward(I, p, cfg, v).refined_background);
  };
  EXPECT_LT(finite_diff_check(by_input, I0, 1e-4), 1e-4);

  // a few whole parameter tensors across the depth of the model
  for (const char* name : {"sep.att1.b", "gb.dec1.mix.b", "ref.cell0.m1.b", "ref.out.b",
                           "ref.aca_b.sharp", "ref.ndm1.w"}) {
    Tensor<double>& target = p.at(name);
    const Tensor<double> saved = target.clone();

    std::vector<double> g_ad;
    {
      Tape<double> tape;
      tape.watch(target);
      auto loss = mean_all(dmgn_forward(I0, p, cfg, v).refined_background);
      tape.backward(loss);
      g_ad.assign(target.grad(), target.grad() + target.numel());
      target.unbind();
    }

    auto by_param = [&](const Tensor<double>& w) {
      for (int i = 0; i < w.numel(); ++i) target[i] = w[i];
      return mean_all(dmgn_forward(I0, p, cfg, v).refined_background);
    };
    for (int i = 0; i < saved.numel(); ++i) {
      const double g_fd = central_diff(by_param, saved, i, 1e-4);
      EXPECT_LT(rel_err(g_ad[static_cast<size_t>(i)], g_fd), 1e-4) << name << "[" << i << "]";
    }
    for (int i = 0; i < saved.numel(); ++i) target[i] = saved[i];
  }
}
