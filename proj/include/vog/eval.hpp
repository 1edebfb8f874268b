#pragma once

// Evaluation protocol: one predicted box per role per frame (the argmax
// proposal), a score threshold that marks boxes outside the anchor video as
// false positives in the concatenated strategies, and the accuracy, strict
// accuracy, consistency and video accuracy metrics.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vog/assembly.hpp"
#include "vog/corpus.hpp"
#include "vog/error.hpp"

namespace vog {

struct Thresholds {
  double theta = 0.2;

  static constexpr double kGt5 = 0.2;
  static constexpr double kDense = 0.1;

  void check() const {
    if (!(theta >= 0.0 && theta <= 1.0)) throw ConfigError("threshold must lie in [0,1], got " + std::to_string(theta));
  }
};

inline double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

// Sigmoid scores for every (role, item) and the derived per-frame argmax.
struct PredictionSet {
  std::size_t k = 0, N = 0, P = 0, F = 0;
  std::vector<double> scores;  // [k][N]

  static PredictionSet from_logits(const AssembledSample& s, const std::vector<double>& logits) {
    if (logits.size() != s.num_roles() * s.num_items()) {
      throw ShapeError("predictions: " + std::to_string(logits.size()) + " logits for " + std::to_string(s.num_roles()) +
                       " roles x " + std::to_string(s.num_items()) + " items");
    }
    PredictionSet p;
    p.k = s.num_roles();
    p.N = s.num_items();
    p.P = s.num_proposals;
    p.F = s.num_frames;
    p.scores.resize(logits.size());
    std::transform(logits.begin(), logits.end(), p.scores.begin(), sigmoid);
    return p;
  }

  static PredictionSet from_scores(const AssembledSample& s, std::vector<double> scores) {
    if (scores.size() != s.num_roles() * s.num_items()) throw ShapeError("predictions: score count mismatch");
    PredictionSet p;
    p.k = s.num_roles();
    p.N = s.num_items();
    p.P = s.num_proposals;
    p.F = s.num_frames;
    p.scores = std::move(scores);
    return p;
  }

  double score(std::size_t l, std::size_t n) const { return scores[l * N + n]; }

  // Highest-scoring item of frame j for role l among items accepted by
  // `keep` (first index wins ties). Returns N if nothing qualifies.
  template <typename Keep>
  std::size_t frame_argmax(std::size_t l, std::size_t j, Keep keep) const {
    std::size_t best = N;
    for (std::size_t i = 0; i < P; ++i) {
      const std::size_t n = j * P + i;
      if (!keep(n)) continue;
      if (best == N || score(l, n) > score(l, best)) best = n;
    }
    return best;
  }
  std::size_t frame_argmax(std::size_t l, std::size_t j) const {
    return frame_argmax(l, j, [](std::size_t) { return true; });
  }

  std::size_t global_argmax(std::size_t l) const {
    std::size_t best = 0;
    for (std::size_t n = 1; n < N; ++n)
      if (score(l, n) > score(l, best)) best = n;
    return best;
  }
};

struct QueryResult {
  int query_id = 0;
  std::size_t roles = 0;    // groundable roles evaluated
  std::size_t correct = 0;
  std::optional<bool> consistent;
  std::optional<bool> video_correct;

  bool strict() const { return roles > 0 && correct == roles; }
};

namespace detail {

inline std::vector<std::size_t> groundable_roles(const AssembledSample& s) {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < s.num_roles(); ++l)
    if (!s.query.phrases[l].gt_boxes.empty()) out.push_back(l);
  return out;
}

// Correct iff in every annotated frame the argmax among `keep` items
// overlaps some ground-truth box of that frame with IoU >= 0.5.
template <typename Keep>
bool annotated_frames_hit(const AssembledSample& s, const PredictionSet& p, std::size_t l, Keep keep) {
  const auto& gts = s.query.phrases[l].gt_boxes;
  std::vector<int> frames;
  for (const auto& g : gts) {
    if (g.frame < 0 || static_cast<std::size_t>(g.frame) >= s.num_frames) {
      throw DataError("query " + std::to_string(s.query.id) + " role " + s.query.phrases[l].role.str() +
                      " has no annotated frame inside the sample");
    }
    if (std::find(frames.begin(), frames.end(), g.frame) == frames.end()) frames.push_back(g.frame);
  }
  if (frames.empty()) throw DataError("groundable role without annotated frame");
  for (int f : frames) {
    const std::size_t best = p.frame_argmax(l, static_cast<std::size_t>(f), keep);
    if (best == p.N) return false;
    bool hit = false;
    for (const auto& g : gts)
      if (g.frame == f && iou(s.boxes[best], g) >= kIouHit) hit = true;
    if (!hit) return false;
  }
  return true;
}

// Strip holding a canvas x coordinate in a side-by-side sample.
inline std::size_t strip_of(const AssembledSample& s, double x) {
  for (std::size_t m = 0; m < s.videos.size(); ++m)
    if (x < s.videos[m].x_end()) return m;
  return s.videos.size() - 1;
}

inline void fill_consistency(QueryResult& r, const std::vector<std::size_t>& predicted, std::size_t anchor) {
  bool same = true;
  for (auto v : predicted) same = same && v == predicted.front();
  r.consistent = same;
  r.video_correct = same && !predicted.empty() && predicted.front() == anchor;
}

}  // namespace detail

inline QueryResult eval_svsq(const PredictionSet& p, const AssembledSample& s) {
  QueryResult r;
  r.query_id = s.query.id;
  for (auto l : detail::groundable_roles(s)) {
    ++r.roles;
    if (detail::annotated_frames_hit(s, p, l, [](std::size_t) { return true; })) ++r.correct;
  }
  return r;
}

// Video score per block = mean over groundable roles of the role's best
// score in the block, plus sigmoid(verb logit) when a verb head is present.
inline std::vector<double> sep_video_scores(const PredictionSet& p, const AssembledSample& s,
                                            const std::vector<double>* verb_logits) {
  const auto roles = detail::groundable_roles(s);
  std::vector<double> vs(s.videos.size(), 0.0);
  for (std::size_t m = 0; m < s.videos.size(); ++m) {
    double total = 0;
    for (auto l : roles) {
      double best = 0;
      bool any = false;
      for (std::size_t n = 0; n < p.N; ++n) {
        if (s.membership[n] != static_cast<int>(m)) continue;
        if (!any || p.score(l, n) > best) best = p.score(l, n);
        any = true;
      }
      total += best;
    }
    vs[m] = roles.empty() ? 0.0 : total / static_cast<double>(roles.size());
    if (verb_logits) vs[m] += sigmoid((*verb_logits)[m]);
  }
  return vs;
}

inline QueryResult eval_sep(const PredictionSet& p, const AssembledSample& s,
                            const std::vector<double>* verb_logits = nullptr) {
  if (verb_logits && verb_logits->size() != s.videos.size()) throw ShapeError("eval_sep: one verb logit per video needed");
  const auto vs = sep_video_scores(p, s, verb_logits);
  const auto chosen = static_cast<std::size_t>(std::max_element(vs.begin(), vs.end()) - vs.begin());
  QueryResult r;
  r.query_id = s.query.id;
  r.video_correct = chosen == s.anchor_pos;
  const int anchor = static_cast<int>(s.anchor_pos);
  for (auto l : detail::groundable_roles(s)) {
    ++r.roles;
    if (*r.video_correct &&
        detail::annotated_frames_hit(s, p, l, [&](std::size_t n) { return s.membership[n] == anchor; }))
      ++r.correct;
  }
  return r;
}

inline QueryResult eval_temp(const PredictionSet& p, const AssembledSample& s, const Thresholds& th) {
  th.check();
  const auto& a = s.anchor();
  QueryResult r;
  r.query_id = s.query.id;
  std::vector<std::size_t> predicted;
  for (auto l : detail::groundable_roles(s)) {
    ++r.roles;
    bool false_positive = false;
    for (std::size_t j = 0; j < s.num_frames; ++j) {
      if (j >= a.frame_begin && j < a.frame_end) continue;
      if (p.score(l, p.frame_argmax(l, j)) > th.theta) false_positive = true;
    }
    if (!false_positive && detail::annotated_frames_hit(s, p, l, [](std::size_t) { return true; })) ++r.correct;
    predicted.push_back(static_cast<std::size_t>(s.membership[p.global_argmax(l)]));
  }
  detail::fill_consistency(r, predicted, s.anchor_pos);
  return r;
}

inline QueryResult eval_spat(const PredictionSet& p, const AssembledSample& s, const Thresholds& th) {
  th.check();
  QueryResult r;
  r.query_id = s.query.id;
  std::vector<std::size_t> predicted;
  for (auto l : detail::groundable_roles(s)) {
    ++r.roles;
    bool false_positive = false;
    for (std::size_t j = 0; j < s.num_frames; ++j) {
      const std::size_t best = p.frame_argmax(l, j);
      if (detail::strip_of(s, s.boxes[best].center_x()) != s.anchor_pos && p.score(l, best) > th.theta)
        false_positive = true;
    }
    if (!false_positive && detail::annotated_frames_hit(s, p, l, [](std::size_t) { return true; })) ++r.correct;
    predicted.push_back(detail::strip_of(s, s.boxes[p.global_argmax(l)].center_x()));
  }
  detail::fill_consistency(r, predicted, s.anchor_pos);
  return r;
}

inline QueryResult evaluate(const PredictionSet& p, const AssembledSample& s, const Thresholds& th,
                            const std::vector<double>* verb_logits = nullptr) {
  switch (s.strategy) {
    case Strategy::kSvsq: return eval_svsq(p, s);
    case Strategy::kSep: return eval_sep(p, s, verb_logits);
    case Strategy::kTemp: return eval_temp(p, s, th);
    case Strategy::kSpat: return eval_spat(p, s, th);
  }
  throw ContractError("unknown strategy");
}

struct MetricsReport {
  Strategy strategy = Strategy::kSvsq;
  double acc = 0, strict_acc = 0;
  std::optional<double> consistency, video_acc;
  std::size_t queries = 0, roles = 0;
};

// Accuracy is averaged per query (fraction of that query's groundable roles
// that are correct, then the mean over queries), which keeps strict_acc <=
// acc for every set of queries. Queries without groundable roles are skipped.
inline MetricsReport aggregate(Strategy strategy, const std::vector<QueryResult>& results) {
  MetricsReport m;
  m.strategy = strategy;
  std::size_t cons = 0, vacc = 0, with_video = 0, with_cons = 0;
  double acc = 0;
  std::size_t strict = 0;
  for (const auto& r : results) {
    if (r.roles == 0) continue;
    ++m.queries;
    m.roles += r.roles;
    acc += static_cast<double>(r.correct) / static_cast<double>(r.roles);
    strict += r.strict() ? 1 : 0;
    if (r.consistent) {
      ++with_cons;
      cons += *r.consistent ? 1 : 0;
    }
    if (r.video_correct) {
      ++with_video;
      vacc += *r.video_correct ? 1 : 0;
    }
  }
  if (m.queries == 0) throw ContractError("aggregate: no evaluated queries");
  const double q = static_cast<double>(m.queries);
  m.acc = acc / q;
  m.strict_acc = static_cast<double>(strict) / q;
  if (strategy == Strategy::kTemp || strategy == Strategy::kSpat) {
    m.consistency = with_cons ? static_cast<double>(cons) / static_cast<double>(with_cons) : 0.0;
  }
  if (strategy != Strategy::kSvsq) {
    m.video_acc = with_video ? static_cast<double>(vacc) / static_cast<double>(with_video) : 0.0;
  }
  return m;
}

// --- reports -------------------------------------------------------------------

struct ReportRow {
  std::string model;
  std::string train_strategy;
  MetricsReport metrics;
  std::string components;  // module switches, e.g. "OTx+MTx+RPE"
  bool gt5 = true;
};

namespace detail {

inline std::string pct(std::optional<double> v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * *v;
  return os.str();
}

inline std::string frac(std::optional<double> v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << *v;
  return os.str();
}

}  // namespace detail

inline std::string render_csv(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ContractError("report: no evaluation results");
  std::ostringstream os;
  os << "model,train,strategy,acc,vacc,cons,sacc,n\n";
  for (const auto& r : rows) {
    const auto& m = r.metrics;
    os << r.model << ',' << r.train_strategy << ',' << strategy_name(m.strategy) << ',' << detail::frac(m.acc) << ','
       << detail::frac(m.video_acc) << ',' << detail::frac(m.consistency) << ',' << detail::frac(m.strict_acc) << ','
       << m.queries << '\n';
  }
  return os.str();
}

// One row per model; column groups per evaluation strategy, each with
// Acc / VAcc / Cons / SAcc (percentages, "-" where a metric is undefined).
inline std::string render_markdown(const std::vector<ReportRow>& rows) {
  if (rows.empty()) throw ContractError("report: no evaluation results");
  std::vector<Strategy> strategies;
  std::vector<std::string> models;
  for (const auto& r : rows) {
    if (std::find(strategies.begin(), strategies.end(), r.metrics.strategy) == strategies.end())
      strategies.push_back(r.metrics.strategy);
    const auto key = r.model + " (" + r.train_strategy + ")";
    if (std::find(models.begin(), models.end(), key) == models.end()) models.push_back(key);
  }
  std::sort(strategies.begin(), strategies.end());
  std::ostringstream os;
  os << "| Model |";
  for (auto s : strategies) os << ' ' << strategy_name(s) << " Acc | VAcc | Cons | SAcc |";
  os << "\n|---|";
  for (std::size_t i = 0; i < strategies.size(); ++i) os << "---|---|---|---|";
  os << '\n';
  for (const auto& key : models) {
    os << "| " << key << " |";
    for (auto s : strategies) {
      const MetricsReport* m = nullptr;
      for (const auto& r : rows)
        if (r.model + " (" + r.train_strategy + ")" == key && r.metrics.strategy == s) m = &r.metrics;
      if (!m) {
        os << " | | | |";
        continue;
      }
      os << ' ' << detail::pct(m->acc) << " | " << detail::pct(m->video_acc) << " | " << detail::pct(m->consistency)
         << " | " << detail::pct(m->strict_acc) << " |";
    }
    os << '\n';
  }
  return os.str();
}

// Train-strategy x eval-strategy matrix of one metric.
inline std::string render_cross_matrix(const std::vector<ReportRow>& rows, bool strict) {
  if (rows.empty()) throw ContractError("report: no evaluation results");
  std::vector<std::string> trains;
  std::vector<Strategy> evals;
  for (const auto& r : rows) {
    if (std::find(trains.begin(), trains.end(), r.train_strategy) == trains.end()) trains.push_back(r.train_strategy);
    if (std::find(evals.begin(), evals.end(), r.metrics.strategy) == evals.end()) evals.push_back(r.metrics.strategy);
  }
  std::sort(evals.begin(), evals.end());
  std::ostringstream os;
  os << "| Train \\ Eval |";
  for (auto e : evals) os << ' ' << strategy_name(e) << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < evals.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& t : trains) {
    os << "| " << t << " |";
    for (auto e : evals) {
      std::string cell;
      for (const auto& r : rows)
        if (r.train_strategy == t && r.metrics.strategy == e)
          cell = detail::pct(strict ? r.metrics.strict_acc : r.metrics.acc);
      os << ' ' << cell << " |";
    }
    os << '\n';
  }
  return os.str();
}

// Ablation table: one row per module combination, with the metrics of one
// evaluation strategy.
inline std::string render_ablation(const std::vector<ReportRow>& rows, Strategy strategy) {
  if (rows.empty()) throw ContractError("report: no evaluation results");
  std::ostringstream os;
  os << "| GT5 | Modules | Train | " << strategy_name(strategy) << " Acc | VAcc | Cons | SAcc |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    if (r.metrics.strategy != strategy) continue;
    const auto& m = r.metrics;
    os << "| " << (r.gt5 ? "yes" : "no") << " | " << (r.components.empty() ? "none" : r.components) << " | "
       << r.train_strategy << " | " << detail::pct(m.acc) << " | " << detail::pct(m.video_acc) << " | "
       << detail::pct(m.consistency) << " | " << detail::pct(m.strict_acc) << " |\n";
  }
  return os.str();
}

}  // namespace vog
