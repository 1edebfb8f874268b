#pragma once

// Training and evaluation loops: per-query sampling, assembly, forward,
// loss and Adam updates, one sample at a time.

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

#include "vog/ad/params.hpp"
#include "vog/assembly.hpp"
#include "vog/corpus.hpp"
#include "vog/eval.hpp"
#include "vog/feature_store.hpp"
#include "vog/model/vognet.hpp"
#include "vog/rng.hpp"
#include "vog/sampler.hpp"

namespace vog {

enum class SamplingMode { kContrastive, kRandom };

inline std::string sampling_name(SamplingMode m) { return m == SamplingMode::kContrastive ? "contrastive" : "random"; }

inline SamplingMode parse_sampling(const std::string& s) {
  if (s == "contrastive" || s == "cs") return SamplingMode::kContrastive;
  if (s == "random" || s == "rs") return SamplingMode::kRandom;
  throw ConfigError("unknown sampling mode '" + s + "'");
}

// Companions for one anchor under a strategy; single-video strategies get none.
inline ContrastiveSet draw_set(const RoleIndex& index, const QueryAnnotation& anchor, Strategy strategy,
                               SamplingMode mode, std::size_t k, Rng& rng) {
  if (strategy == Strategy::kSvsq || k <= 1) {
    ContrastiveSet s;
    s.anchor = anchor.id;
    return s;
  }
  if (mode == SamplingMode::kRandom) return sample_random(*index.corpus, index.selector, anchor, k, rng);
  return sample_contrastive(index, anchor, rng, k);
}

struct TrainConfig {
  Strategy strategy = Strategy::kSpat;
  SamplingMode sampling = SamplingMode::kContrastive;
  std::size_t epochs = 10;
  double lr = 1e-4;
  std::size_t k = kMaxVideos;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0;
  std::size_t samples = 0;
  std::size_t skipped = 0;
};

// Queries of split `split`, in id order.
inline std::vector<const QueryAnnotation*> queries_of(const Corpus& c, Split split) {
  std::vector<const QueryAnnotation*> out;
  for (const auto& q : c.queries)
    if (q.split == split) out.push_back(&q);
  return out;
}

// The per-sample stream is a function of (seed, epoch, query id) only, so a
// run is reproducible regardless of visiting order.
inline std::vector<EpochStats> train_model(VogModel& model, const Corpus& corpus, const FeatureStore& store,
                                           const TrainConfig& cfg,
                                           const std::function<void(const EpochStats&)>& on_epoch = {}) {
  const auto train = queries_of(corpus, Split::kTrain);
  if (train.empty()) throw DataError("training split is empty");
  const auto index = build_index(corpus, SplitSelector::train());
  ad::AdamState adam;
  adam.lr = cfg.lr;
  auto& params = model.params();
  std::vector<EpochStats> log;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    auto order = train;
    Rng order_rng(derive_seed({cfg.seed, e, 0x0eULL}));
    order_rng.shuffle(order);
    EpochStats st;
    st.epoch = e + 1;
    double total = 0;
    for (const auto* q : order) {
      Rng rng(derive_seed({cfg.seed, e, static_cast<std::uint64_t>(q->id)}));
      const auto set = draw_set(index, *q, cfg.strategy, cfg.sampling, cfg.k, rng);
      const auto sample = assemble(cfg.strategy, set, corpus, store, rng);
      params.zero_grad();
      const auto out = model.forward(sample);
      const auto loss = model.loss(out, sample);
      if (!loss) {
        ++st.skipped;
        continue;
      }
      ad::backward(*loss);
      ad::adam_step(adam, params);
      total += loss->item();
      ++st.samples;
    }
    st.mean_loss = st.samples ? total / static_cast<double>(st.samples) : 0.0;
    log.push_back(st);
    if (on_epoch) on_epoch(st);
  }
  return log;
}

struct EvalConfig {
  Strategy strategy = Strategy::kSpat;
  SamplingMode sampling = SamplingMode::kContrastive;
  Thresholds thresholds;
  std::size_t k = kMaxVideos;
  Split split = Split::kTest;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// The evaluation samples, fixed by (seed, query id) so every model sees the
// same sets. Passing a noise-free twin store yields the matching clean samples.
inline std::vector<AssembledSample> eval_samples(const Corpus& corpus, const FeatureStore& store,
                                                 const EvalConfig& cfg) {
  const auto queries = queries_of(corpus, cfg.split);
  if (queries.empty()) throw DataError("evaluation split '" + split_name(cfg.split) + "' is empty");
  const auto index = build_index(corpus, SplitSelector::eval(corpus, cfg.split));
  std::vector<AssembledSample> out;
  out.reserve(queries.size());
  for (const auto* q : queries) {
    Rng rng(derive_seed({cfg.seed, 0xe7a1ULL, static_cast<std::uint64_t>(q->id)}));
    const auto set = draw_set(index, *q, cfg.strategy, cfg.sampling, cfg.k, rng);
    out.push_back(assemble(cfg.strategy, set, corpus, store, rng));
  }
  return out;
}

struct ScoredSample {
  std::vector<double> logits;  // [k][N]
  std::optional<std::vector<double>> verb_logits;
};

// Forward passes without recording a graph, spread over `jobs` threads.
// Results are stored by position, so the output does not depend on `jobs`.
inline std::vector<ScoredSample> score_samples(const VogModel& model, const std::vector<AssembledSample>& samples,
                                               std::size_t jobs) {
  std::vector<ScoredSample> out(samples.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    ad::NoGradGuard guard;
    for (std::size_t i = begin; i < samples.size(); i += step) {
      const auto o = model.forward(samples[i]);
      out[i].logits.assign(o.logits.values().begin(), o.logits.values().end());
      if (o.verb_logits) out[i].verb_logits.emplace(o.verb_logits->values().begin(), o.verb_logits->values().end());
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, samples.size()));
  if (jobs == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(work, t, jobs);
  for (auto& th : pool) th.join();
  return out;
}

struct EvalResult {
  MetricsReport report;
  std::vector<QueryResult> per_query;
};

inline EvalResult evaluate_scored(const std::vector<AssembledSample>& samples, const std::vector<ScoredSample>& scored,
                                  const EvalConfig& cfg) {
  EvalResult r;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto preds = PredictionSet::from_logits(samples[i], scored[i].logits);
    const auto* verb = scored[i].verb_logits ? &*scored[i].verb_logits : nullptr;
    r.per_query.push_back(evaluate(preds, samples[i], cfg.thresholds, verb));
  }
  r.report = aggregate(cfg.strategy, r.per_query);
  return r;
}

inline EvalResult evaluate_model(const VogModel& model, const Corpus& corpus, const FeatureStore& store,
                                 const EvalConfig& cfg) {
  cfg.thresholds.check();
  const auto samples = eval_samples(corpus, store, cfg);
  return evaluate_scored(samples, score_samples(model, samples, cfg.jobs), cfg);
}

}  // namespace vog
