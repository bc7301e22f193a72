#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "gelae/model.h"
#include "gtest/gtest.h"
#include "model_checks.h"
#include "oracles.h"

namespace gelae {
namespace {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;
using check::batch1;
using check::mat;
using check::model_gradient_error;
using check::permuted;
using check::random_systems;

// ---- binning --------------------------------------------------------------

TEST(Binning, DecodesExactGridValues) {
  const ModelConfig c;
  EXPECT_EQ(class_to_scc(299, c), 0.0);
  EXPECT_EQ(class_to_scc(0, c), -2.99);
  EXPECT_EQ(class_to_scc(1999, c), 17.00);
  EXPECT_THROW(class_to_scc(2000, c), std::out_of_range);
}

TEST(Binning, EncodesEndpointsAndInteriors) {
  const ModelConfig c;
  EXPECT_EQ(scc_to_class(-2.99, c), 0u);
  EXPECT_EQ(scc_to_class(17.00, c), 1999u);
  EXPECT_EQ(scc_to_class(-2.985, c), 1u);
  EXPECT_EQ(scc_to_class(-50.0, c), 0u);
  EXPECT_EQ(scc_to_class(50.0, c), 1999u);
}

TEST(Binning, RoundTripsEveryClass) {
  const ModelConfig c;
  for (std::size_t k = 0; k < c.n_classes; ++k) {
    ASSERT_EQ(scc_to_class(class_to_scc(k, c), c), k) << k;
  }
}

TEST(Binning, MatchesIntervalMembership) {
  // Class c (c >= 1) covers (-2.99 + (c-1)/100, -2.99 + c/100].
  const ModelConfig c;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2.98, 16.99);
  for (int i = 0; i < 10000; ++i) {
    const double y = u(rng);
    const std::size_t k = scc_to_class(y, c);
    ASSERT_GE(k, 1u);
    const double lower = (static_cast<double>(k) - 1.0 - 299.0) / 100.0;
    const double upper = (static_cast<double>(k) - 299.0) / 100.0;
    EXPECT_GT(y, lower - 1e-9) << y;
    EXPECT_LE(y, upper + 1e-9) << y;
  }
}

TEST(ModelConfig, RejectsIndivisibleWidth) {
  ModelConfig c;
  c.r = 66;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = ModelConfig{};
  c.n_classes = 1000;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_NO_THROW(ModelConfig::tiny().validate());
  EXPECT_NO_THROW(ModelConfig::full_scale().validate());
}

TEST(ModelConfig, JsonRoundTripAndUnknownKey) {
  ModelConfig c = ModelConfig::tiny();
  c.score_fn = ScoreFn::kMlp;
  c.attention_scope = AttentionScope::kGlobal;
  c.head = HeadKind::kRegression;
  const ModelConfig back = model_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(model_config_from_json({{"width", 3}}), std::invalid_argument);
}

// ---- embedding ------------------------------------------------------------

TEST(EmbedBonds, ZeroWeightsGiveZero) {
  ModelParams p = ModelParams::initialize(ModelConfig::tiny(), 1);
  std::fill(p.embed_w.values().begin(), p.embed_w.values().end(), 0.0);
  const auto systems = random_systems(2, 5);
  Tape t;
  const auto bound = bind(t, p);
  const Var e = embed_bonds(t, t.constant(make_batch(systems).features), bound);
  EXPECT_EQ(t.shape(e), (Shape{2, 8, 8}));
  for (const double v : t.value(e).values()) EXPECT_EQ(v, 0.0);
}

TEST(EmbedBonds, RejectsWrongWidth) {
  ModelParams p = ModelParams::initialize(ModelConfig::tiny(), 1);
  Tape t;
  const auto bound = bind(t, p);
  EXPECT_THROW(embed_bonds(t, t.constant(Tensor(Shape{1, 8, 7})), bound), std::invalid_argument);
}

TEST(EmbedBonds, RowLocal) {
  ModelParams p = ModelParams::initialize(ModelConfig{}, 2);
  auto systems = random_systems(1, 6);
  auto run = [&](const CouplingSystem& s) {
    Tape t;
    const auto bound = bind(t, p);
    const Var e = embed_bonds(
        t, t.constant(make_batch(std::span<const CouplingSystem>(&s, 1)).features), bound);
    return t.value(e);
  };
  const Tensor base = run(systems[0]);
  CouplingSystem changed = systems[0];
  for (std::size_t c = 0; c < kFeatures; ++c) changed.features[2 * kFeatures + c] += 0.37;
  const Tensor after = run(changed);
  const std::size_t r = p.config.r;
  for (std::size_t i = 0; i < kSlots; ++i) {
    bool differs = false;
    for (std::size_t c = 0; c < r; ++c) differs = differs || base[i * r + c] != after[i * r + c];
    EXPECT_EQ(differs, i == 2) << "row " << i;
  }
}

// ---- scores ---------------------------------------------------------------

TEST(ScoreDpa, IdentityQueriesGiveHalfOnDiagonal) {
  Tensor q(Shape{1, 8, 4});
  for (std::size_t i = 0; i < 4; ++i) q[i * 4 + i] = 1.0;
  Tape t;
  const Var qv = t.constant(q);
  const Tensor& s = t.value(score_dpa(t, qv, qv));
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_DOUBLE_EQ(s[i * 8 + j], (i == j && i < 4) ? 0.5 : 0.0);
    }
  }
}

TEST(ScoreDpa, ZeroQueryGivesZero) {
  std::mt19937_64 rng(1);
  Tape t;
  const Tensor& s = t.value(score_dpa(t, t.constant(Tensor(Shape{1, 8, 16})),
                                      t.constant(batch1(oracle::random_mat(8, 16, rng)))));
  for (const double v : s.values()) EXPECT_EQ(v, 0.0);
}

TEST(ScoreDpa, MatchesPerPairDotProducts) {
  std::mt19937_64 rng(2);
  const auto q = oracle::random_mat(8, 16, rng), k = oracle::random_mat(8, 16, rng);
  Tape t;
  const Tensor& s = t.value(score_dpa(t, t.constant(batch1(q)), t.constant(batch1(k))));
  std::uniform_int_distribution<int> pick(0, 7);
  for (int n = 0; n < 10; ++n) {
    const int i = pick(rng), j = pick(rng);
    double dot = 0.0;
    for (std::size_t c = 0; c < 16; ++c) dot += q(i, c) * k(j, c);
    EXPECT_NEAR(s[i * 8 + j], dot / 4.0, 1e-14);
  }
}

TEST(ScoreMpa, ZeroOutputMapGivesZero) {
  std::mt19937_64 rng(3);
  Tape t;
  const Var s = score_mpa(t, t.constant(batch1(oracle::random_mat(8, 4, rng))),
                          t.constant(batch1(oracle::random_mat(8, 4, rng))),
                          t.constant(mat(oracle::random_mat(8, 5, rng))),
                          t.constant(Tensor(Shape{5, 1})));
  for (const double v : t.value(s).values()) EXPECT_EQ(v, 0.0);
}

TEST(ScoreMpa, ZeroInputsGiveZero) {
  std::mt19937_64 rng(4);
  Tape t;
  const Var zero = t.constant(Tensor(Shape{1, 8, 4}));
  const Var s = score_mpa(t, zero, zero, t.constant(mat(oracle::random_mat(8, 5, rng))),
                          t.constant(mat(oracle::random_mat(5, 1, rng))));
  for (const double v : t.value(s).values()) EXPECT_EQ(v, 0.0);
}

TEST(ScoreMpa, MatchesElementwiseDefinition) {
  std::mt19937_64 rng(5);
  const std::size_t d = 6, h = 7;
  const auto q = oracle::random_mat(8, d, rng, 2.0), k = oracle::random_mat(8, d, rng, 2.0);
  const auto w1 = oracle::random_mat(2 * d, h, rng), w2 = oracle::random_mat(h, 1, rng);
  Tape t;
  const Tensor& s = t.value(score_mpa(t, t.constant(batch1(q)), t.constant(batch1(k)),
                                      t.constant(mat(w1)), t.constant(mat(w2))));
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      double expected = 0.0;
      for (std::size_t m = 0; m < h; ++m) {
        double hidden = 0.0;
        for (std::size_t l = 0; l < d; ++l) {
          hidden += std::tanh(q(i, l)) * w1(l, m) + std::tanh(k(j, l)) * w1(d + l, m);
        }
        expected += hidden * w2(m, 0);
      }
      EXPECT_NEAR(s[i * 8 + j], expected, 1e-12);
    }
  }
}

// ---- masking and attention --------------------------------------------------

AttentionMasks masks_for(Tape& t, const Tensor& allowed) {
  const std::size_t n = allowed.shape()[1];
  Tensor blocked(allowed.shape()), keep(allowed.shape(), 1.0);
  for (std::size_t i = 0; i < allowed.size(); ++i) blocked[i] = (1.0 - allowed[i]) * -1000.0;
  (void)n;
  return {t.constant(allowed), t.constant(blocked), t.constant(keep)};
}

TEST(MaskScores, TwoByTwoIllustration) {
  Tape t;
  const auto m = masks_for(t, Tensor(Shape{1, 2, 2}, {1, 0, 0, 1}));
  const Tensor& s = t.value(mask_scores(t, t.constant(Tensor(Shape{1, 2, 2}, {2, 3, 4, 5})), m));
  EXPECT_EQ(std::vector<double>(s.values().begin(), s.values().end()),
            (std::vector<double>{2, -1000, -1000, 5}));
}

TEST(MaskScores, AllOnesIsNoOp) {
  std::mt19937_64 rng(6);
  const Tensor scores = batch1(oracle::random_mat(8, 8, rng));
  Tape t;
  const auto m = masks_for(t, Tensor(Shape{1, 8, 8}, 1.0));
  const Tensor& s = t.value(mask_scores(t, t.constant(scores), m));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(s[i], scores[i]);
}

TEST(MaskScores, GlobalScopeWithFullOccupancyIsNoOp) {
  auto systems = random_systems(1, 7);
  Batch b = make_batch(systems);
  std::fill(b.occupancy.values().begin(), b.occupancy.values().end(), 1.0);
  std::mt19937_64 rng(8);
  const Tensor scores = batch1(oracle::random_mat(8, 8, rng));
  Tape t;
  const auto m = make_masks(t, b, AttentionScope::kGlobal);
  const Tensor& s = t.value(mask_scores(t, t.constant(scores), m));
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(s[i], scores[i]);
}

TEST(AttentionApply, SingleSupportCopiesValueRow) {
  std::mt19937_64 rng(9);
  const auto v = oracle::random_mat(8, 4, rng);
  Tensor allowed(Shape{1, 8, 8});
  for (std::size_t i = 0; i < 8; ++i) allowed[i * 8 + (i + 3) % 8] = 1.0;
  Tape t;
  const auto m = masks_for(t, allowed);
  const Var s = mask_scores(t, t.constant(batch1(oracle::random_mat(8, 8, rng))), m);
  const Tensor& z = t.value(attention_apply(t, s, t.constant(batch1(v)), m).z);
  for (std::size_t i = 0; i < 8; ++i) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(z[i * 4 + c], v((i + 3) % 8, c), 1e-12);
  }
}

TEST(AttentionApply, UniformScoresAverageSupport) {
  std::mt19937_64 rng(10);
  const auto v = oracle::random_mat(8, 4, rng);
  Tensor allowed(Shape{1, 8, 8});
  for (std::size_t j = 0; j < 3; ++j) allowed[0 * 8 + j] = 1.0;  // row 0: support {0,1,2}
  for (std::size_t i = 1; i < 8; ++i) allowed[i * 8 + i] = 1.0;
  Tape t;
  const auto m = masks_for(t, allowed);
  const Var s = mask_scores(t, t.constant(Tensor(Shape{1, 8, 8}, 0.7)), m);
  const Tensor& z = t.value(attention_apply(t, s, t.constant(batch1(v)), m).z);
  for (std::size_t c = 0; c < 4; ++c) {
    EXPECT_NEAR(z[c], (v(0, c) + v(1, c) + v(2, c)) / 3.0, 1e-12);
  }
}

TEST(AttentionApply, DualPathDot) {
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_LT(check::dual_path_error(false, s), 1e-10);
}

TEST(AttentionApply, DualPathMlp) {
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_LT(check::dual_path_error(true, s), 1e-10);
}

// ---- encoder --------------------------------------------------------------

struct EncoderRun {
  Tensor h;
  std::vector<Tensor> alphas;
};

EncoderRun run_encoder(ModelParams& p, const Batch& b, const Tensor& h_in) {
  Tape t;
  const auto bound = bind(t, p);
  const auto masks = make_masks(t, b, p.config.attention_scope);
  const auto out = encoder_forward(t, t.constant(h_in), bound.encoders[0], masks, p.config);
  EncoderRun r{t.value(out.h), {}};
  for (const Var a : out.alphas) r.alphas.push_back(t.value(a));
  return r;
}

TEST(EncoderForward, PreservesShape) {
  ModelParams p = ModelParams::initialize(ModelConfig{}, 11);
  const auto systems = random_systems(3, 12);
  std::mt19937_64 rng(13);
  Tensor h(Shape{3, 8, 64});
  for (double& x : h.values()) x = std::uniform_real_distribution<double>(-1, 1)(rng);
  EXPECT_EQ(run_encoder(p, make_batch(systems), h).h.shape(), (Shape{3, 8, 64}));
}

TEST(EncoderForward, EquivariantUnderSlotPermutation) {
  for (const auto score : {ScoreFn::kDot, ScoreFn::kMlp}) {
    ModelConfig c;
    c.score_fn = score;
    ModelParams p = ModelParams::initialize(c, 14);
    const auto systems = random_systems(1, 15);
    std::mt19937_64 rng(16);
    Tensor h(Shape{1, 8, 64});
    for (double& x : h.values()) x = std::uniform_real_distribution<double>(-1, 1)(rng);
    std::array<std::size_t, 8> perm{};
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto ps = permuted(systems[0], perm);
    Tensor hp(h.shape());
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t col = 0; col < 64; ++col) hp[i * 64 + col] = h[perm[i] * 64 + col];
    }
    const Tensor out = run_encoder(p, make_batch(systems), h).h;
    const Tensor out_p =
        run_encoder(p, make_batch(std::span<const CouplingSystem>(&ps, 1)), hp).h;
    for (std::size_t i = 0; i < 8; ++i) {
      for (std::size_t col = 0; col < 64; ++col) {
        EXPECT_NEAR(out_p[i * 64 + col], out[perm[i] * 64 + col], 1e-12);
      }
    }
  }
}

TEST(EncoderForward, LocalScopeIgnoresNonAdjacentSlots) {
  ModelParams p = ModelParams::initialize(ModelConfig{}, 17);
  // Slot 1 (X1 side) is not adjacent to slot 5 (X2 side).
  auto systems = random_systems(40, 18);
  const auto it = std::find_if(systems.begin(), systems.end(), [](const CouplingSystem& s) {
    return s.occupied(1) && s.occupied(5);
  });
  ASSERT_NE(it, systems.end());
  ASSERT_EQ(it->adj(1, 5), 0.0);
  const std::span<const CouplingSystem> one(&*it, 1);
  std::mt19937_64 rng(19);
  Tensor h(Shape{1, 8, 64});
  for (double& x : h.values()) x = std::uniform_real_distribution<double>(-1, 1)(rng);
  Tensor h2 = h;
  for (std::size_t col = 0; col < 64; ++col) h2[5 * 64 + col] = 0.0;
  const Tensor a = run_encoder(p, make_batch(one), h).h;
  const Tensor b = run_encoder(p, make_batch(one), h2).h;
  for (std::size_t col = 0; col < 64; ++col) EXPECT_EQ(a[1 * 64 + col], b[1 * 64 + col]);
}

// ---- pooling and heads ----------------------------------------------------

TEST(MaskedPool, SumsMaskedRows) {
  std::mt19937_64 rng(20);
  const auto h = oracle::random_mat(8, 5, rng);
  Tensor mask(Shape{1, 1, 8});
  mask[0] = 1.0;
  mask[4] = 1.0;
  Tape t;
  const Tensor& pooled = t.value(masked_pool(t, t.constant(batch1(h)), mask));
  EXPECT_EQ(pooled.shape(), (Shape{1, 5}));
  for (std::size_t c = 0; c < 5; ++c) EXPECT_DOUBLE_EQ(pooled[c], h(0, c) + h(4, c));
}

TEST(MaskedPool, ZeroMaskThrows) {
  Tape t;
  EXPECT_THROW(masked_pool(t, t.constant(Tensor(Shape{1, 8, 3})), Tensor(Shape{1, 1, 8})),
               std::invalid_argument);
}

TEST(MaskedPool, MaskedOutRowsDoNotMatter) {
  std::mt19937_64 rng(21);
  auto h = oracle::random_mat(8, 5, rng);
  Tensor mask(Shape{1, 1, 8});
  mask[0] = mask[4] = 1.0;
  Tape t;
  const Tensor before = t.value(masked_pool(t, t.constant(batch1(h)), mask));
  for (std::size_t c = 0; c < 5; ++c) std::swap(h(2, c), h(6, c));
  const Tensor after = t.value(masked_pool(t, t.constant(batch1(h)), mask));
  for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(before[c], after[c]);
}

TEST(HeadClassification, ProbabilitiesSumToOne) {
  ModelParams p = ModelParams::initialize(ModelConfig{}, 22);
  const auto systems = random_systems(4, 23);
  Tape t;
  const auto r = forward(t, make_batch(systems), bind(t, p), p.config);
  const Tensor& probs = t.value(r.output);
  for (std::size_t b = 0; b < 4; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < 2000; ++c) s += probs[b * 2000 + c];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(HeadClassification, ZeroFinalLayerIsUniform) {
  ModelParams p = ModelParams::initialize(ModelConfig{}, 24);
  std::fill(p.fc.back().weight.values().begin(), p.fc.back().weight.values().end(), 0.0);
  const auto systems = random_systems(2, 25);
  Tape t;
  const auto r = forward(t, make_batch(systems), bind(t, p), p.config);
  for (const double v : t.value(r.output).values()) EXPECT_NEAR(v, 1.0 / 2000.0, 1e-15);
}

TEST(HeadClassification, ArgmaxStableUnderLogitShift) {
  ModelParams p = ModelParams::initialize(ModelConfig{}, 26);
  const auto systems = random_systems(3, 27);
  const auto before = predict(p, systems);
  for (double& b : p.fc.back().bias.values()) b += 12.5;
  const auto after = predict(p, systems);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(before[i].cls, after[i].cls);
}

Tensor regression_output(double raw_bias) {
  ModelConfig c;
  c.head = HeadKind::kRegression;
  ModelParams p = ModelParams::initialize(c, 28);
  std::fill(p.fc.back().weight.values().begin(), p.fc.back().weight.values().end(), 0.0);
  p.fc.back().bias[0] = raw_bias;
  const auto systems = random_systems(2, 29);
  Tape t;
  const auto r = forward(t, make_batch(systems), bind(t, p), p.config);
  return t.value(r.output);
}

TEST(HeadRegression, MidpointAtZero) {
  const Tensor y = regression_output(0.0);
  EXPECT_NEAR(y[0], 7.005, 1e-12);
}

TEST(HeadRegression, SaturatesAtUpperBound) {
  EXPECT_NEAR(regression_output(40.0)[0], 17.00, 1e-9);
  EXPECT_NEAR(regression_output(-40.0)[0], -2.99, 1e-9);
}

TEST(HeadRegression, StaysInsideRange) {
  ModelConfig c;
  c.head = HeadKind::kRegression;
  ModelParams p = ModelParams::initialize(c, 30);
  for (double& w : p.fc.back().weight.values()) w *= 5.0;
  const auto systems = random_systems(50, 31);
  for (const auto& pr : predict(p, systems)) {
    EXPECT_GT(pr.scc, -2.99);
    EXPECT_LT(pr.scc, 17.00);
  }
}

// ---- losses ---------------------------------------------------------------

TEST(LossClassification, PerfectAndUniform) {
  Tape t;
  const std::vector<std::size_t> cls{3};
  Tensor perfect(Shape{1, 2000});
  perfect[3] = 1.0;
  EXPECT_EQ(t.value(loss_classification(t, t.constant(perfect), one_hot(cls, 2000)))[0], 0.0);
  const Tensor uniform(Shape{2, 2000}, 1.0 / 2000.0);
  const std::vector<std::size_t> two{3, 1999};
  EXPECT_NEAR(t.value(loss_classification(t, t.constant(uniform), one_hot(two, 2000)))[0] / 2,
              std::log(2000.0), 1e-12);
  EXPECT_NEAR(std::log(2000.0), 7.6009, 1e-4);
}

TEST(LossClassification, RejectsBadLabels) {
  Tape t;
  Tensor labels(Shape{1, 4});
  labels[0] = labels[1] = 1.0;
  EXPECT_THROW(loss_classification(t, t.constant(Tensor(Shape{1, 4}, 0.25)), labels),
               std::invalid_argument);
}

TEST(LossClassification, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(32);
  Tensor logits(Shape{3, 6});
  for (double& v : logits.values()) v = std::uniform_real_distribution<double>(-1, 1)(rng);
  logits.set_requires_grad(true);
  const std::vector<std::size_t> cls{0, 5, 2};
  const Tensor labels = one_hot(cls, 6);
  Tensor* params[] = {&logits};
  const auto res = ad::gradient_check(
      [&](Tape& t) {
        return loss_classification(t, ad::softmax_rows(t, t.parameter(logits)), labels);
      },
      params);
  EXPECT_LT(res.max_rel_error, 1e-5);
}

TEST(LossRegression, Examples) {
  Tape t;
  const Tensor y(Shape{2}, {1, 3});
  EXPECT_EQ(t.value(loss_regression(t, t.constant(y), y))[0], 0.0);
  EXPECT_DOUBLE_EQ(
      t.value(loss_regression(t, t.constant(Tensor(Shape{2}, {2, 3})), y))[0], 0.5);
  EXPECT_THROW(loss_regression(t, t.constant(Tensor(Shape{0})), Tensor(Shape{0})),
               std::invalid_argument);
}

TEST(LossRegression, GradientOffKink) {
  Tensor pred(Shape{4}, {0.3, -1.2, 2.5, 0.9});
  pred.set_requires_grad(true);
  const Tensor target(Shape{4}, {1.0, -1.0, 2.0, -0.5});
  Tensor* params[] = {&pred};
  const auto res = ad::gradient_check(
      [&](Tape& t) { return loss_regression(t, t.parameter(pred), target); }, params);
  EXPECT_LT(res.max_rel_error, 1e-5);
}

// ---- full model -----------------------------------------------------------

TEST(Forward, GradientCheckTinyConfig) {
  for (const auto head : {HeadKind::kClassification, HeadKind::kRegression}) {
    for (const auto score : {ScoreFn::kDot, ScoreFn::kMlp}) {
      for (const auto scope : {AttentionScope::kLocal, AttentionScope::kGlobal}) {
        EXPECT_LT(model_gradient_error(head, score, scope), 1e-3)
            << to_string(head) << " " << to_string(score) << " " << to_string(scope);
      }
    }
  }
}

TEST(Forward, LocalAttentionIsZeroOffAdjacency) {
  for (const auto score : {ScoreFn::kDot, ScoreFn::kMlp}) {
    ModelConfig c;
    c.score_fn = score;
    ModelParams p = ModelParams::initialize(c, 35);
    const auto systems = random_systems(20, 36);
    Tape t;
    const auto r = forward(t, make_batch(systems), bind(t, p), c, /*keep_attention=*/true);
    ASSERT_EQ(r.attention.size(), 24u);
    for (const Var a : r.attention) {
      const Tensor& alpha = t.value(a);
      for (std::size_t b = 0; b < systems.size(); ++b) {
        for (std::size_t i = 0; i < 64; ++i) {
          if (systems[b].adjacency[i] == 0.0) ASSERT_LT(alpha[b * 64 + i], 1e-200);
        }
      }
    }
  }
}

TEST(Forward, OccupiedAttentionRowsSumToOne) {
  ModelParams p = ModelParams::initialize(ModelConfig{}, 37);
  const auto systems = random_systems(5, 38);
  for (const auto& s : systems) {
    for (const auto& layer : attention_maps(p, s)) {
      for (const auto& m : layer) {
        for (std::size_t i = 0; i < 8; ++i) {
          double sum = 0.0;
          for (std::size_t j = 0; j < 8; ++j) sum += m[i * 8 + j];
          EXPECT_NEAR(sum, s.occupied(i) ? 1.0 : 0.0, 1e-12);
        }
      }
    }
  }
}

TEST(Forward, InvariantUnderJointSlotPermutation) {
  for (const auto scope : {AttentionScope::kLocal, AttentionScope::kGlobal}) {
    ModelConfig c;
    c.attention_scope = scope;
    ModelParams p = ModelParams::initialize(c, 39);
    const auto systems = random_systems(10, 40);
    std::mt19937_64 rng(41);
    for (const auto& s : systems) {
      std::array<std::size_t, 8> perm{};
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      const CouplingSystem ps = permuted(s, perm);
      Tape t;
      const auto bound = bind(t, p);
      const auto a = forward(t, make_batch(std::span<const CouplingSystem>(&s, 1)), bound, c);
      const auto b = forward(t, make_batch(std::span<const CouplingSystem>(&ps, 1)), bound, c);
      const Tensor& pa = t.value(a.output);
      const Tensor& pb = t.value(b.output);
      for (std::size_t k = 0; k < pa.size(); ++k) ASSERT_NEAR(pa[k], pb[k], 1e-9);
    }
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  for (const auto score : {ScoreFn::kDot, ScoreFn::kMlp}) {
    ModelConfig c;
    c.score_fn = score;
    c.head = score == ScoreFn::kMlp ? HeadKind::kRegression : HeadKind::kClassification;
    ModelParams p = ModelParams::initialize(c, 42);
    std::stringstream buf;
    p.save(buf);
    ModelParams q = ModelParams::load(buf);
    EXPECT_EQ(to_json(q.config), to_json(c));
    const auto systems = random_systems(6, 43);
    Tape t1, t2;
    const auto a = forward(t1, make_batch(systems), bind(t1, p), c);
    const auto b = forward(t2, make_batch(systems), bind(t2, q), q.config);
    const Tensor& ya = t1.value(a.output);
    const Tensor& yb = t2.value(b.output);
    for (std::size_t k = 0; k < ya.size(); ++k) ASSERT_EQ(ya[k], yb[k]);
  }
}

TEST(Checkpoint, NamesAreUnique) {
  ModelConfig c;
  c.score_fn = ScoreFn::kMlp;
  const ModelParams p = ModelParams::initialize(c, 44);
  std::set<std::string> names;
  std::size_t count = 0;
  p.for_each([&](const std::string& n, const Tensor&, ParamKind) {
    names.insert(n);
    ++count;
  });
  EXPECT_EQ(names.size(), count);
  EXPECT_EQ(count, 2u + 6u * (4u * 5u + 8u) + 6u);
}

TEST(Checkpoint, ShapeMismatchIsRejected) {
  ModelParams p = ModelParams::initialize(ModelConfig::tiny(), 45);
  std::vector<NamedTensor> named;
  p.for_each([&](const std::string& n, const Tensor& t, ParamKind) { named.push_back({n, t}); });
  named[0].tensor = Tensor(Shape{8, 9});
  std::stringstream buf;
  write_checkpoint(buf, named, to_json(p.config));
  EXPECT_THROW(ModelParams::load(buf), std::runtime_error);
}

TEST(Initialize, DeterministicAndBounded) {
  const ModelParams a = ModelParams::initialize(ModelConfig{}, 46);
  const ModelParams b = ModelParams::initialize(ModelConfig{}, 46);
  const ModelParams c = ModelParams::initialize(ModelConfig{}, 47);
  EXPECT_EQ(std::vector<double>(a.embed_w.values().begin(), a.embed_w.values().end()),
            std::vector<double>(b.embed_w.values().begin(), b.embed_w.values().end()));
  EXPECT_NE(a.embed_w[0], c.embed_w[0]);
  const double limit = std::sqrt(6.0 / (8 + 64));
  for (const double v : a.embed_w.values()) EXPECT_LE(std::abs(v), limit);
  for (const double v : a.encoders[0].ln1_gain.values()) EXPECT_EQ(v, 1.0);
  for (const double v : a.encoders[0].ff1_b.values()) EXPECT_EQ(v, 0.0);
}

}  // namespace
}  // namespace gelae
