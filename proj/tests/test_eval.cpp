#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "vog/eval.hpp"
#include "vog/synthworld.hpp"
#include "vog/train.hpp"

using namespace vog;
using vog::testing::metric_oracle;
using vog::testing::random_scores;

namespace {

// Samples of every strategy drawn from a small synthetic world.
const std::vector<AssembledSample>& fixture_samples() {
  static const std::vector<AssembledSample> samples = [] {
    WorldConfig wc;
    wc.n_train = 8;
    wc.n_eval = 40;
    wc.F = 3;
    wc.seed = 21;
    const auto w = gen_world(wc);
    std::vector<AssembledSample> out;
    for (Strategy st : {Strategy::kSvsq, Strategy::kSep, Strategy::kTemp, Strategy::kSpat}) {
      EvalConfig ec;
      ec.strategy = st;
      ec.seed = 5;
      for (auto& s : eval_samples(w.corpus, w.store, ec)) out.push_back(std::move(s));
    }
    return out;
  }();
  return samples;
}

}  // namespace

TEST(Eval, MatchesBruteForceOracle) {
  const auto& samples = fixture_samples();
  Rng rng(1);
  std::size_t strict_seen = 0, wrong_seen = 0;
  for (std::size_t t = 0; t < 500; ++t) {
    const auto& s = samples[rng.below(samples.size())];
    const auto sc = random_scores(s, rng);
    Thresholds th;
    th.theta = std::vector<double>{0.0, 0.1, 0.2, 0.5, 1.0}[rng.below(5)];
    const auto got = evaluate(PredictionSet::from_scores(s, sc), s, th);
    const auto want = metric_oracle(s, sc, th.theta);
    ASSERT_NEAR(static_cast<double>(got.correct) / static_cast<double>(got.roles), want.acc, 1e-12)
        << strategy_name(s.strategy) << " trial " << t;
    ASSERT_EQ(got.strict(), want.strict);
    ASSERT_EQ(got.consistent, want.consistent);
    ASSERT_EQ(got.video_correct, want.video_correct);
    strict_seen += want.strict;
    wrong_seen += !want.strict;
  }
  EXPECT_GT(strict_seen, 50u);
  EXPECT_GT(wrong_seen, 50u);
}

TEST(Eval, GroundTruthScoresAreStrictlyCorrect) {
  for (const auto& s : fixture_samples()) {
    std::vector<double> sc(s.gt.begin(), s.gt.end());
    for (double theta : {0.0, 0.2, 1.0}) {
      Thresholds th;
      th.theta = theta;
      const auto r = evaluate(PredictionSet::from_scores(s, sc), s, th);
      EXPECT_TRUE(r.strict()) << strategy_name(s.strategy) << " query " << s.query.id;
      if (r.video_correct) {
        EXPECT_TRUE(*r.video_correct);
      }
    }
  }
}

TEST(Eval, AccuracyIsMonotoneInThreshold) {
  Rng rng(2);
  for (const auto& s : fixture_samples()) {
    if (s.strategy != Strategy::kSpat && s.strategy != Strategy::kTemp) continue;
    const auto p = PredictionSet::from_scores(s, random_scores(s, rng));
    std::size_t prev = 0;
    for (double theta = 0; theta <= 1.0; theta += 0.05) {
      Thresholds th;
      th.theta = theta;
      const auto r = evaluate(p, s, th);
      EXPECT_GE(r.correct, prev);
      prev = r.correct;
    }
  }
}

// At theta = 1 no score can flag another video, so TEMP reduces to grounding
// within the anchor frames.
TEST(Eval, TempAtFullThresholdIsSingleVideoGrounding) {
  Rng rng(4);
  std::size_t seen = 0;
  for (const auto& s : fixture_samples()) {
    if (s.strategy != Strategy::kTemp) continue;
    for (int t = 0; t < 5; ++t) {
      std::vector<double> logits(s.num_roles() * s.num_items());
      for (auto& x : logits) x = rng.normal() * 4;
      const auto p = PredictionSet::from_logits(s, logits);
      Thresholds th;
      th.theta = 1.0;
      const auto temp = evaluate(p, s, th);
      const auto single = eval_svsq(p, s);
      EXPECT_EQ(temp.roles, single.roles);
      EXPECT_EQ(temp.correct, single.correct);
      ++seen;
    }
  }
  EXPECT_GT(seen, 0u);
}

TEST(Eval, ConfidentOutsideBoxIsAFalsePositive) {
  const auto& samples = fixture_samples();
  const auto it = std::find_if(samples.begin(), samples.end(),
                               [](const AssembledSample& s) { return s.strategy == Strategy::kSpat; });
  ASSERT_NE(it, samples.end());
  const auto& s = *it;
  std::vector<double> sc(s.gt.begin(), s.gt.end());
  // In a frame without annotation the winner is outside the anchor with 0.3.
  const std::size_t l = s.positive_roles.front();
  const int gt_frame = s.query.phrases[l].gt_boxes.front().frame;
  std::size_t frame = 0;
  while (static_cast<int>(frame) == gt_frame) ++frame;
  std::size_t outside = s.num_items();
  for (std::size_t i = 0; i < s.num_proposals; ++i)
    if (s.membership[s.item(i, frame)] != static_cast<int>(s.anchor_pos)) outside = s.item(i, frame);
  ASSERT_LT(outside, s.num_items());
  sc[l * s.num_items() + outside] = 0.3;
  const auto p = PredictionSet::from_scores(s, sc);
  Thresholds low, high;
  low.theta = 0.2;
  high.theta = 0.5;
  EXPECT_FALSE(evaluate(p, s, low).strict());
  EXPECT_TRUE(evaluate(p, s, high).strict());
}

TEST(Eval, MacroAveragingOverQueries) {
  QueryResult a, b;
  a.roles = 2;
  a.correct = 1;
  b.roles = 1;
  b.correct = 1;
  a.consistent = true;
  a.video_correct = false;
  b.consistent = true;
  b.video_correct = true;
  const auto m = aggregate(Strategy::kSpat, {a, b});
  EXPECT_DOUBLE_EQ(m.acc, 0.75);
  EXPECT_DOUBLE_EQ(m.strict_acc, 0.5);
  EXPECT_DOUBLE_EQ(*m.consistency, 1.0);
  EXPECT_DOUBLE_EQ(*m.video_acc, 0.5);
  EXPECT_EQ(m.queries, 2u);
  EXPECT_EQ(m.roles, 3u);
}

TEST(Eval, ContractsAndShapes) {
  EXPECT_THROW(aggregate(Strategy::kSvsq, {}), ContractError);
  EXPECT_THROW(render_csv({}), ContractError);
  EXPECT_THROW(render_markdown({}), ContractError);
  Thresholds bad;
  bad.theta = -0.1;
  EXPECT_THROW(bad.check(), ConfigError);
  bad.theta = 1.5;
  EXPECT_THROW(bad.check(), ConfigError);
  const auto& s = fixture_samples().front();
  EXPECT_THROW(PredictionSet::from_logits(s, {0.0}), ShapeError);
  const auto sep = std::find_if(fixture_samples().begin(), fixture_samples().end(),
                                [](const AssembledSample& x) { return x.strategy == Strategy::kSep; });
  const std::vector<double> verb{0.0};
  std::vector<double> sc(sep->gt.begin(), sep->gt.end());
  EXPECT_THROW(eval_sep(PredictionSet::from_scores(*sep, sc), *sep, &verb), ShapeError);
}

TEST(Eval, VerbLogitsCanOverrideTheVideoChoice) {
  const auto sep = std::find_if(fixture_samples().begin(), fixture_samples().end(),
                                [](const AssembledSample& x) { return x.strategy == Strategy::kSep; });
  const auto& s = *sep;
  // Flat role scores: the verb head alone decides.
  std::vector<double> sc(s.num_roles() * s.num_items(), 0.5);
  std::vector<double> verb(s.videos.size(), -20.0);
  verb[(s.anchor_pos + 1) % s.videos.size()] = 20.0;
  EXPECT_FALSE(*eval_sep(PredictionSet::from_scores(s, sc), s, &verb).video_correct);
  verb.assign(s.videos.size(), -20.0);
  verb[s.anchor_pos] = 20.0;
  EXPECT_TRUE(*eval_sep(PredictionSet::from_scores(s, sc), s, &verb).video_correct);
}

TEST(Report, RendersRowsAndCrossMatrix) {
  QueryResult a;
  a.roles = 1;
  a.correct = 1;
  a.consistent = a.video_correct = true;
  ReportRow r{"vognet", "spat", aggregate(Strategy::kSpat, {a}), "OTx+MTx+RPE"};
  const auto csv = render_csv({r});
  EXPECT_NE(csv.find("model,train,strategy,acc,vacc,cons,sacc,n"), std::string::npos);
  EXPECT_NE(csv.find("vognet,spat,spat,1.000000"), std::string::npos);
  EXPECT_NE(render_markdown({r}).find("100.00"), std::string::npos);
  EXPECT_NE(render_cross_matrix({r}, true).find("| spat |"), std::string::npos);
}
