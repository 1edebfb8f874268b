#pragma once

// Turns a contrastive set into one model input under the SVSQ, SEP, TEMP or
// SPAT strategy: coordinate remapping, frame resampling, normalized 5-d
// positions, video membership and ground-truth labels.
//
// Items are laid out frame-major: item n = j * P' + i for proposal i of
// canvas frame j.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vog/corpus.hpp"
#include "vog/error.hpp"
#include "vog/feature_store.hpp"
#include "vog/rng.hpp"
#include "vog/sampler.hpp"

namespace vog {

enum class Strategy { kSvsq, kSep, kTemp, kSpat };

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kSvsq: return "svsq";
    case Strategy::kSep: return "sep";
    case Strategy::kTemp: return "temp";
    case Strategy::kSpat: return "spat";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "svsq") return Strategy::kSvsq;
  if (s == "sep") return Strategy::kSep;
  if (s == "temp") return Strategy::kTemp;
  if (s == "spat") return Strategy::kSpat;
  throw ConfigError("unknown strategy '" + s + "'");
}

using NormalizedPos = std::array<double, 5>;

// Where one source video lands in the assembled sample. The map is affine:
// canvas = source * scale + offset (x and y), canvas frame = frame_map^-1.
struct Placement {
  std::string video_id;
  int query_id = 0;
  double scale_x = 1, scale_y = 1;
  double offset_x = 0;
  double width = 0, height = 0;  // extent of this video on the canvas
  std::size_t frame_begin = 0, frame_end = 0;
  std::size_t proposal_begin = 0, proposal_end = 0;
  std::vector<int> frame_map;  // canvas frame (relative to frame_begin) -> source frame

  double x_begin() const { return offset_x; }
  double x_end() const { return offset_x + width; }

  Box to_canvas(const Box& b, int canvas_frame) const {
    return Box{b.x1 * scale_x + offset_x, b.y1 * scale_y, b.x2 * scale_x + offset_x, b.y2 * scale_y, canvas_frame};
  }
  Box to_source(const Box& b) const {
    const int rel = b.frame - static_cast<int>(frame_begin);
    const int src = rel >= 0 && rel < static_cast<int>(frame_map.size()) ? frame_map[static_cast<std::size_t>(rel)] : -1;
    return Box{(b.x1 - offset_x) / scale_x, b.y1 / scale_y, (b.x2 - offset_x) / scale_x, b.y2 / scale_y, src};
  }
  // Canvas frame holding a source frame (nearest sampled frame).
  int canvas_frame(int source_frame) const {
    int best = 0;
    for (std::size_t t = 0; t < frame_map.size(); ++t)
      if (std::abs(frame_map[t] - source_frame) < std::abs(frame_map[static_cast<std::size_t>(best)] - source_frame))
        best = static_cast<int>(t);
    return static_cast<int>(frame_begin) + best;
  }
};

struct AssembledSample {
  Strategy strategy = Strategy::kSvsq;
  std::size_t num_proposals = 0;  // P'
  std::size_t num_frames = 0;     // F'
  std::size_t d_v = 0, d_s = 0;
  double canvas_width = 0, canvas_height = 0;
  std::vector<Placement> videos;  // in canvas order
  std::size_t anchor_pos = 0;

  std::vector<double> features;         // [N][d_v]
  std::vector<double> segments;         // [N][d_s], segment of the item's source video and frame
  std::vector<Box> boxes;               // [N], canvas coordinates
  std::vector<NormalizedPos> positions; // [N]
  std::vector<int> membership;          // [N] -> index into videos

  QueryAnnotation query;            // anchor, boxes remapped to canvas coordinates
  std::vector<std::uint8_t> gt;     // [k][N]
  std::vector<std::size_t> positive_roles;  // phrases with at least one positive label

  std::size_t num_items() const { return num_proposals * num_frames; }
  std::size_t item(std::size_t i, std::size_t j) const { return j * num_proposals + i; }
  std::size_t num_roles() const { return query.phrases.size(); }
  std::uint8_t label(std::size_t role, std::size_t n) const { return gt[role * num_items() + n]; }
  const Placement& anchor() const { return videos[anchor_pos]; }

  // Proposal indices belonging to block/video m (SEP blocks, SPAT strips).
  std::vector<std::size_t> items_of(std::size_t m) const {
    std::vector<std::size_t> out;
    for (std::size_t n = 0; n < num_items(); ++n)
      if (membership[n] == static_cast<int>(m)) out.push_back(n);
    return out;
  }
};

// Ground-truth labels for a query against an assembled sample's proposals.
// Exposed separately for callers that swap in a different query.
inline std::vector<std::uint8_t> build_gt_labels(const AssembledSample& sample, const QueryAnnotation& canvas_query,
                                                 std::vector<std::size_t>* positive_roles = nullptr) {
  const std::size_t N = sample.num_items();
  const std::size_t k = canvas_query.phrases.size();
  std::vector<std::uint8_t> gt(k * N, 0);
  if (positive_roles) positive_roles->clear();
  for (std::size_t l = 0; l < k; ++l) {
    bool any = false;
    for (std::size_t n = 0; n < N; ++n) {
      if (sample.membership[n] != static_cast<int>(sample.anchor_pos)) continue;
      const int frame = static_cast<int>(n / sample.num_proposals);
      for (const auto& g : canvas_query.phrases[l].gt_boxes) {
        if (g.frame == frame && iou(sample.boxes[n], g) >= kIouHit) {
          gt[l * N + n] = 1;
          any = true;
        }
      }
    }
    if (any && positive_roles) positive_roles->push_back(l);
  }
  return gt;
}

namespace detail {

struct Source {
  const QueryAnnotation* query;
  const ProposalSet* props;
};

inline std::vector<Source> resolve_sources(const ContrastiveSet& set, const Corpus& corpus, const FeatureStore& store,
                                           Rng& rng) {
  std::vector<int> ids{set.anchor};
  for (const auto& c : set.companions) ids.push_back(c.query_id);
  std::vector<Source> out;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= corpus.queries.size()) {
      throw DataError("assembly: unknown query " + std::to_string(id));
    }
    const auto& q = corpus.queries[static_cast<std::size_t>(id)];
    auto it = store.find(q.video_id);
    if (it == store.end()) throw DataError("assembly: missing features for video '" + q.video_id + "'");
    out.push_back(Source{&q, &it->second});
  }
  // Random video order; the anchor's slot carries no information.
  rng.shuffle(out);
  return out;
}

inline double clamp01(double v) { return v < 0 ? 0.0 : (v > 1 ? 1.0 : v); }

inline void finish_sample(AssembledSample& s, const QueryAnnotation& anchor) {
  // Remap anchor ground truth into canvas coordinates.
  const auto& pl = s.anchor();
  s.query = anchor;
  for (auto& p : s.query.phrases)
    for (auto& b : p.gt_boxes) b = pl.to_canvas(b, pl.canvas_frame(b.frame));

  s.gt = build_gt_labels(s, s.query, &s.positive_roles);
}

inline void check_uniform(const std::vector<Source>& src) {
  for (const auto& s : src) {
    if (s.props->P != src[0].props->P || s.props->d_v != src[0].props->d_v || s.props->d_s != src[0].props->d_s) {
      throw DataError("assembly: videos disagree on proposal count or feature sizes");
    }
  }
}

inline AssembledSample begin_sample(Strategy strategy, const std::vector<Source>& src, int anchor_id) {
  check_uniform(src);
  AssembledSample s;
  s.strategy = strategy;
  s.d_v = src[0].props->d_v;
  s.d_s = src[0].props->d_s;
  for (std::size_t m = 0; m < src.size(); ++m)
    if (src[m].query->id == anchor_id) s.anchor_pos = m;
  return s;
}

inline void resize_items(AssembledSample& s) {
  const std::size_t N = s.num_items();
  s.features.assign(N * s.d_v, 0.0);
  s.segments.assign(N * s.d_s, 0.0);
  s.boxes.assign(N, Box{});
  s.positions.assign(N, NormalizedPos{});
  s.membership.assign(N, 0);
}

inline void put_item(AssembledSample& s, std::size_t n, const ProposalSet& ps, std::size_t i, std::size_t src_j) {
  std::copy_n(ps.feature(i, src_j), s.d_v, s.features.begin() + static_cast<std::ptrdiff_t>(n * s.d_v));
  std::copy_n(ps.segment(src_j), s.d_s, s.segments.begin() + static_cast<std::ptrdiff_t>(n * s.d_s));
}

}  // namespace detail

// Temporal concatenation: every video rescaled to the anchor's frame size,
// frames appended in (random) video order.
inline AssembledSample assemble_temp(const ContrastiveSet& set, const Corpus& corpus, const FeatureStore& store,
                                     Rng& rng, Strategy tag = Strategy::kTemp) {
  const auto src = detail::resolve_sources(set, corpus, store, rng);
  auto s = detail::begin_sample(tag, src, set.anchor);
  const auto& anchor_ps = *src[s.anchor_pos].props;
  const std::size_t F = anchor_ps.F;
  for (const auto& x : src)
    if (x.props->F != F) throw DataError("temp: videos have different frame counts");
  const std::size_t P = anchor_ps.P;
  const std::size_t k = src.size();
  s.num_proposals = P;
  s.num_frames = k * F;
  s.canvas_width = anchor_ps.width;
  s.canvas_height = anchor_ps.height;
  detail::resize_items(s);

  for (std::size_t m = 0; m < k; ++m) {
    const auto& ps = *src[m].props;
    Placement pl;
    pl.video_id = ps.video_id;
    pl.query_id = src[m].query->id;
    pl.scale_x = s.canvas_width / ps.width;
    pl.scale_y = s.canvas_height / ps.height;
    pl.width = s.canvas_width;
    pl.height = s.canvas_height;
    pl.frame_begin = m * F;
    pl.frame_end = (m + 1) * F;
    pl.proposal_begin = 0;
    pl.proposal_end = P;
    for (std::size_t j = 0; j < F; ++j) pl.frame_map.push_back(static_cast<int>(j));
    for (std::size_t j = 0; j < F; ++j) {
      const std::size_t cj = m * F + j;
      for (std::size_t i = 0; i < P; ++i) {
        const std::size_t n = s.item(i, cj);
        detail::put_item(s, n, ps, i, j);
        const Box b = pl.to_canvas(ps.box(i, j), static_cast<int>(cj));
        s.boxes[n] = b;
        s.positions[n] = {detail::clamp01(b.x1 / s.canvas_width), detail::clamp01(b.y1 / s.canvas_height),
                          detail::clamp01(b.x2 / s.canvas_width), detail::clamp01(b.y2 / s.canvas_height),
                          static_cast<double>(cj) / static_cast<double>(s.num_frames)};
        s.membership[n] = static_cast<int>(m);
      }
    }
    s.videos.push_back(std::move(pl));
  }
  detail::finish_sample(s, *src[s.anchor_pos].query);
  return s;
}

// Single video, single query: the one-video case of temporal concatenation.
inline AssembledSample assemble_svsq(const QueryAnnotation& anchor, const Corpus& corpus, const FeatureStore& store) {
  ContrastiveSet set;
  set.anchor = anchor.id;
  Rng unused(0);
  return assemble_temp(set, corpus, store, unused, Strategy::kSvsq);
}

// Spatial concatenation: every video scaled to the anchor's height, F frames
// sampled uniformly from each, and frames placed side by side.
inline AssembledSample assemble_spat(const ContrastiveSet& set, const Corpus& corpus, const FeatureStore& store,
                                     Rng& rng) {
  const auto src = detail::resolve_sources(set, corpus, store, rng);
  auto s = detail::begin_sample(Strategy::kSpat, src, set.anchor);
  const auto& anchor_ps = *src[s.anchor_pos].props;
  const std::size_t F = anchor_ps.F;
  const std::size_t P = anchor_ps.P;
  const std::size_t k = src.size();
  s.num_proposals = k * P;
  s.num_frames = F;
  s.canvas_height = anchor_ps.height;
  double x = 0;
  for (std::size_t m = 0; m < k; ++m) {
    const auto& ps = *src[m].props;
    const double scale = s.canvas_height / ps.height;
    Placement pl;
    pl.video_id = ps.video_id;
    pl.query_id = src[m].query->id;
    pl.scale_x = scale;
    pl.scale_y = scale;
    pl.offset_x = x;
    pl.width = ps.width * scale;
    pl.height = s.canvas_height;
    pl.frame_begin = 0;
    pl.frame_end = F;
    pl.proposal_begin = m * P;
    pl.proposal_end = (m + 1) * P;
    for (std::size_t t = 0; t < F; ++t) {
      const double src_t = F > 1 ? static_cast<double>(t) * static_cast<double>(ps.F - 1) / static_cast<double>(F - 1) : 0.0;
      pl.frame_map.push_back(static_cast<int>(std::lround(src_t)));
    }
    x += pl.width;
    s.videos.push_back(std::move(pl));
  }
  s.canvas_width = x;
  detail::resize_items(s);

  for (std::size_t m = 0; m < k; ++m) {
    const auto& ps = *src[m].props;
    const auto& pl = s.videos[m];
    for (std::size_t j = 0; j < F; ++j) {
      const auto sj = static_cast<std::size_t>(pl.frame_map[j]);
      for (std::size_t i = 0; i < P; ++i) {
        const std::size_t n = s.item(m * P + i, j);
        detail::put_item(s, n, ps, i, sj);
        const Box b = pl.to_canvas(ps.box(i, sj), static_cast<int>(j));
        s.boxes[n] = b;
        s.positions[n] = {detail::clamp01(b.x1 / s.canvas_width), detail::clamp01(b.y1 / s.canvas_height),
                          detail::clamp01(b.x2 / s.canvas_width), detail::clamp01(b.y2 / s.canvas_height),
                          static_cast<double>(j) / static_cast<double>(F)};
        s.membership[n] = static_cast<int>(m);
      }
    }
  }
  detail::finish_sample(s, *src[s.anchor_pos].query);
  return s;
}

// Separate videos: k independent blocks stacked along the proposal axis,
// coordinates untouched and positions normalized per block.
inline AssembledSample assemble_sep(const ContrastiveSet& set, const Corpus& corpus, const FeatureStore& store,
                                    Rng& rng) {
  const auto src = detail::resolve_sources(set, corpus, store, rng);
  auto s = detail::begin_sample(Strategy::kSep, src, set.anchor);
  const auto& anchor_ps = *src[s.anchor_pos].props;
  const std::size_t F = anchor_ps.F;
  for (const auto& x : src)
    if (x.props->F != F) throw DataError("sep: videos have different frame counts");
  const std::size_t P = anchor_ps.P;
  const std::size_t k = src.size();
  s.num_proposals = k * P;
  s.num_frames = F;
  s.canvas_width = anchor_ps.width;
  s.canvas_height = anchor_ps.height;
  detail::resize_items(s);
  for (std::size_t m = 0; m < k; ++m) {
    const auto& ps = *src[m].props;
    Placement pl;
    pl.video_id = ps.video_id;
    pl.query_id = src[m].query->id;
    pl.width = ps.width;
    pl.height = ps.height;
    pl.frame_begin = 0;
    pl.frame_end = F;
    pl.proposal_begin = m * P;
    pl.proposal_end = (m + 1) * P;
    for (std::size_t j = 0; j < F; ++j) pl.frame_map.push_back(static_cast<int>(j));
    for (std::size_t j = 0; j < F; ++j)
      for (std::size_t i = 0; i < P; ++i) {
        const std::size_t n = s.item(m * P + i, j);
        detail::put_item(s, n, ps, i, j);
        const Box b = ps.box(i, j);
        s.boxes[n] = b;
        s.positions[n] = {detail::clamp01(b.x1 / ps.width), detail::clamp01(b.y1 / ps.height),
                          detail::clamp01(b.x2 / ps.width), detail::clamp01(b.y2 / ps.height),
                          static_cast<double>(j) / static_cast<double>(F)};
        s.membership[n] = static_cast<int>(m);
      }
    s.videos.push_back(std::move(pl));
  }
  detail::finish_sample(s, *src[s.anchor_pos].query);
  return s;
}

inline AssembledSample assemble(Strategy strategy, const ContrastiveSet& set, const Corpus& corpus,
                                const FeatureStore& store, Rng& rng) {
  switch (strategy) {
    case Strategy::kSvsq: return assemble_svsq(corpus.queries.at(static_cast<std::size_t>(set.anchor)), corpus, store);
    case Strategy::kSep: return assemble_sep(set, corpus, store, rng);
    case Strategy::kTemp: return assemble_temp(set, corpus, store, rng);
    case Strategy::kSpat: return assemble_spat(set, corpus, store, rng);
  }
  throw ContractError("unknown strategy");
}

}  // namespace vog
