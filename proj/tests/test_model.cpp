#include <gtest/gtest.h>

#include <cmath>

#include "model_fixtures.hpp"
#include "oracles.hpp"
#include "vog/ad/gradcheck.hpp"
#include "vog/model/vognet.hpp"

using namespace vog;
using vog::testing::max_abs_diff;
using vog::testing::micro_sample;
using vog::testing::micro_vocab;
using vog::testing::random_positions;
using vog::testing::rpe_loop_error;

namespace {

constexpr std::size_t kDv = 3, kDs = 2;

ModelConfig desk(Variant v) { return make_model_config(v, Profile::kDesk, kDv, kDs); }

ad::Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal();
  return ad::Tensor({r, c}, v);
}

}  // namespace

TEST(ModelConfig, VariantRules) {
  auto c = desk(Variant::kImgGrnd);
  c.rpe = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk(Variant::kVidGrnd);
  c.rpe = true;
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk(Variant::kVogNet);
  c.mtx = false;
  EXPECT_THROW(c.validate(), ConfigError);
  c = desk(Variant::kAblation);
  c.otx = c.mtx = false;
  EXPECT_THROW(c.validate(), ConfigError);
  c.rpe = false;
  EXPECT_NO_THROW(c.validate());
  c = desk(Variant::kVogNet);
  c.d_fused = 47;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_variant("resnet"), ConfigError);
  EXPECT_THROW(parse_profile("huge"), ConfigError);
}

TEST(ModelConfig, HeadDimRoundsUp) {
  auto c = make_model_config(Variant::kVogNet, Profile::kPaper, 2048, 1024);
  EXPECT_EQ(c.d_fused, 1024u);
  EXPECT_EQ(c.head_dim(c.d_fused), 342u);
  EXPECT_EQ(c.head_dim(c.d_mm()), 427u);
  EXPECT_EQ(desk(Variant::kVogNet).head_dim(48), 16u);
}

TEST(VogModel, OutputShapesPerVariant) {
  const auto s = micro_sample(3, 2, kDv, kDs, 1);
  for (Variant v : {Variant::kImgGrnd, Variant::kVidGrnd, Variant::kVogNet}) {
    VogModel m(desk(v), micro_vocab(), 1);
    const auto out = m.forward(s);
    EXPECT_EQ(out.logits.shape(), (ad::Shape{3, 6})) << variant_name(v);
    EXPECT_FALSE(out.verb_logits);
  }
}

TEST(VogModel, SameSeedSameParameters) {
  VogModel a(desk(Variant::kVogNet), micro_vocab(), 4), b(desk(Variant::kVogNet), micro_vocab(), 4),
      c(desk(Variant::kVogNet), micro_vocab(), 5);
  const auto s = micro_sample(2, 2, kDv, kDs, 2);
  EXPECT_EQ(max_abs_diff(a.forward(s).logits.values(), b.forward(s).logits.values()), 0.0);
  EXPECT_GT(max_abs_diff(a.forward(s).logits.values(), c.forward(s).logits.values()), 0.0);
}

TEST(VogModel, FeatureSizeMismatchIsShapeError) {
  VogModel m(desk(Variant::kVogNet), micro_vocab(), 1);
  EXPECT_THROW(m.forward(micro_sample(2, 2, kDv + 1, kDs, 1)), ShapeError);
}

TEST(VogModel, QueryContracts) {
  VogModel m(desk(Variant::kImgGrnd), micro_vocab(), 1);
  EXPECT_THROW(m.encode_query({"the", "man"}, {Span{1, 2}}), ContractError);
  EXPECT_THROW(m.encode_query({}, {Span{0, 0}}), ContractError);
  EXPECT_THROW(m.encode_query(std::vector<std::string>(21, "the"), {Span{0, 0}}), ContractError);
  const auto enc = m.encode_query({"the", "man", "unseenword"}, {Span{0, 1}, Span{2, 2}});
  EXPECT_EQ(enc.roles.shape(), (ad::Shape{2, 16}));
}

TEST(Rpe, ZeroDeltaMatchesPlainAttention) {
  auto with = desk(Variant::kVogNet);
  auto without = desk(Variant::kAblation);
  without.rpe = false;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    VogModel a(with, micro_vocab(), seed);
    VogModel b(without, micro_vocab(), seed + 100);
    EXPECT_GT(copy_shared_params(a, b), 0u);
    for (Strategy st : {Strategy::kSvsq, Strategy::kSep}) {
      const auto s = micro_sample(4, 3, kDv, kDs, seed, st, st == Strategy::kSep ? 2 : 1);
      ForwardOptions zero;
      zero.zero_delta = true;
      const auto la = a.forward(s, zero).logits, lb = b.forward(s).logits;
      EXPECT_LE(max_abs_diff(la.values(), lb.values()), 1e-12);
      // The real bias does change the output.
      EXPECT_GT(max_abs_diff(a.forward(s).logits.values(), lb.values()), 1e-9);
    }
  }
}

TEST(Rpe, BatchedDeltaMatchesPairLoop) {
  VogModel m(desk(Variant::kVogNet), micro_vocab(), 7);
  const auto& mp = *m.otx()->mp;
  Rng rng(3);
  for (std::size_t N : {1u, 2u, 5u, 17u, 64u}) {
    const auto pos = random_positions(N, rng);
    const double worst = rpe_loop_error(mp, pos, m.rpe_delta(mp, pos));
    EXPECT_LE(worst, 1e-12) << "N=" << N;
  }
}

TEST(Rpe, PermutationEquivariance) {
  VogModel m(desk(Variant::kVogNet), micro_vocab(), 9);
  const auto& otx = *m.otx();
  Rng rng(5);
  const std::size_t N = 12;
  const auto x = random_matrix(N, 48, rng);
  std::vector<std::size_t> perm(N);
  for (std::size_t i = 0; i < N; ++i) perm[i] = i;
  rng.shuffle(perm);
  const auto px = ad::embedding_lookup(x, perm);
  // Without positions the layer commutes with any permutation of its inputs.
  const auto y = otx(x, nullptr), py = otx(px, nullptr);
  EXPECT_LE(max_abs_diff(ad::embedding_lookup(y, perm).values(), py.values()), 1e-12);
  // With positions held in place, permuting the features changes which
  // pairs the bias applies to, so equivariance breaks.
  const auto bias = m.rpe_delta(*otx.mp, random_positions(N, rng));
  const auto yb = otx(x, &bias), pyb = otx(px, &bias);
  EXPECT_GT(max_abs_diff(ad::embedding_lookup(yb, perm).values(), pyb.values()), 1e-6);
  // Moving positions together with the features restores it.
  auto pos = random_positions(N, rng);
  std::vector<NormalizedPos> ppos(N);
  for (std::size_t i = 0; i < N; ++i) ppos[i] = pos[perm[i]];
  const auto b0 = m.rpe_delta(*otx.mp, pos), b1 = m.rpe_delta(*otx.mp, ppos);
  EXPECT_LE(max_abs_diff(ad::embedding_lookup(otx(x, &b0), perm).values(), otx(px, &b1).values()), 1e-12);
}

TEST(GradCheck, MicroVogNetAllParameters) {
  auto cfg = desk(Variant::kVogNet);
  ASSERT_EQ(cfg.d_fused, 48u);
  VogModel m(cfg, micro_vocab(), 3);
  // k = 2 roles (Arg0, V), P' = 2, F' = 2.
  const auto s = micro_sample(2, 2, kDv, kDs, 5, Strategy::kSvsq, 1, false);
  ASSERT_EQ(s.num_roles(), 2u);
  std::vector<ad::NamedTensor> inputs;
  for (const auto& p : m.params().all()) inputs.push_back({p.name, p.tensor});
  ad::GradCheckOptions opt;
  opt.max_coords_per_tensor = 24;
  const auto rep = ad::grad_check([&] { return *m.loss(m.forward(s), s); }, inputs, opt);
  EXPECT_TRUE(rep.passed) << rep.worst.tensor << "[" << rep.worst.index << "] analytic " << rep.worst.analytic
                          << " numeric " << rep.worst.numeric;
  EXPECT_LE(rep.max_rel_error, 1e-4);
  EXPECT_GT(rep.checked, 500u);
}

TEST(GradCheck, SharedMicroCheckPasses) {
  ad::GradCheckOptions opt;
  opt.max_coords_per_tensor = 16;
  const auto rep = micro_model_gradcheck(11, opt);
  EXPECT_TRUE(rep.passed) << rep.worst.tensor << " rel " << rep.max_rel_error;
}

TEST(GradCheck, SepSampleWithVerbHead) {
  auto cfg = desk(Variant::kVogNet);
  cfg.verb_head = true;
  VogModel m(cfg, micro_vocab(), 4);
  const auto s = micro_sample(2, 2, kDv, kDs, 6, Strategy::kSep, 2, false);
  std::vector<ad::NamedTensor> inputs;
  for (const auto& p : m.params().all()) inputs.push_back({p.name, p.tensor});
  ad::GradCheckOptions opt;
  opt.max_coords_per_tensor = 8;
  const auto rep = ad::grad_check([&] { return *m.loss(m.forward(s), s); }, inputs, opt);
  EXPECT_LE(rep.max_rel_error, 1e-4) << rep.worst.tensor << "[" << rep.worst.index << "] " << rep.worst.analytic << " vs " << rep.worst.numeric;
}

TEST(Mtx, FramesAreIndependent) {
  VogModel m(desk(Variant::kVogNet), micro_vocab(), 2);
  auto s = micro_sample(3, 3, kDv, kDs, 8);
  const std::size_t k = 3, N = s.num_items();
  Rng rng(1);
  const auto base = random_matrix(k * N, m.config().d_mm(), rng);
  const auto out = m.multimodal_transformer(base, s, k);
  // Perturb every row of frame 2 (all role copies).
  auto changed = base.values();
  std::vector<double> v(changed.begin(), changed.end());
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t c = 0; c < m.config().d_mm(); ++c) v[(l * N + 2 * 3 + i) * m.config().d_mm() + c] += 1.0;
  const auto out2 = m.multimodal_transformer(ad::Tensor(base.shape(), v), s, k);
  const std::size_t D = m.config().d_mm();
  for (std::size_t l = 0; l < k; ++l)
    for (std::size_t n = 0; n < N; ++n) {
      double d = 0;
      for (std::size_t c = 0; c < D; ++c) d = std::max(d, std::abs(out[(l * N + n) * D + c] - out2[(l * N + n) * D + c]));
      if (n / 3 == 2)
        EXPECT_GT(d, 1e-6);
      else
        EXPECT_EQ(d, 0.0) << "role " << l << " item " << n;
    }
}

TEST(Sep, BlocksDoNotSeeEachOther) {
  VogModel m(desk(Variant::kVogNet), micro_vocab(), 3);
  auto s = micro_sample(2, 2, kDv, kDs, 9, Strategy::kSep, 3);
  const auto before = m.forward(s).logits;
  // Change every feature of block 2.
  for (std::size_t n = 0; n < s.num_items(); ++n)
    if (s.membership[n] == 2)
      for (std::size_t c = 0; c < kDv; ++c) s.features[n * kDv + c] += 3.0;
  const auto after = m.forward(s).logits;
  const std::size_t N = s.num_items();
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t n = 0; n < N; ++n) {
      const double d = std::abs(before[l * N + n] - after[l * N + n]);
      if (s.membership[n] == 2)
        EXPECT_GT(d, 0.0);
      else
        EXPECT_LE(d, 1e-12);
    }
}

TEST(VerbHead, OnlyForSeparateVideos) {
  auto cfg = desk(Variant::kVogNet);
  cfg.verb_head = true;
  VogModel m(cfg, micro_vocab(), 1);
  const auto sep = micro_sample(2, 2, kDv, kDs, 1, Strategy::kSep, 3);
  const auto out = m.forward(sep);
  ASSERT_TRUE(out.verb_logits);
  EXPECT_EQ(out.verb_logits->shape(), (ad::Shape{3}));
  const auto svsq = micro_sample(2, 2, kDv, kDs, 1);
  EXPECT_FALSE(m.forward(svsq).verb_logits);
  EXPECT_THROW(m.verb_score(svsq, m.encode_query(svsq.query)), ContractError);
}

TEST(Loss, MeanBceOverGroundableRoles) {
  VogModel m(desk(Variant::kVogNet), micro_vocab(), 6);
  const auto s = micro_sample(3, 2, kDv, kDs, 10);
  const auto out = m.forward(s);
  const auto loss = m.loss(out, s);
  ASSERT_TRUE(loss);
  // Oracle: only Arg0 carries boxes.
  const std::size_t N = s.num_items();
  double total = 0;
  for (std::size_t n = 0; n < N; ++n) {
    const double z = out.logits[n], y = s.label(0, n);
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  EXPECT_NEAR(loss->item(), total / static_cast<double>(N), 1e-12);
  EXPECT_EQ(s.label(0, 0), 1);
}

TEST(Loss, NoGroundableRoleSkipsSample) {
  VogModel m(desk(Variant::kImgGrnd), micro_vocab(), 6);
  auto s = micro_sample(3, 2, kDv, kDs, 10);
  for (auto& p : s.query.phrases) {
    p.gt_boxes.clear();
    p.groundable = false;
  }
  EXPECT_FALSE(m.loss(m.forward(s), s));
}

TEST(Checkpoint, ModelRoundTrip) {
  VogModel a(desk(Variant::kVogNet), micro_vocab(), 1), b(desk(Variant::kVogNet), micro_vocab(), 2);
  const auto s = micro_sample(2, 2, kDv, kDs, 3);
  ad::load_into(ad::decode_checkpoint(ad::encode_checkpoint(a.params(), "{}")), b.params());
  EXPECT_EQ(max_abs_diff(a.forward(s).logits.values(), b.forward(s).logits.values()), 0.0);
  VogModel c(desk(Variant::kImgGrnd), micro_vocab(), 1);
  EXPECT_THROW(ad::load_into(ad::decode_checkpoint(ad::encode_checkpoint(a.params(), "{}")), c.params()), Error);
}
