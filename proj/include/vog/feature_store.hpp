#pragma once

// Per-video proposal/segment features and the VOGF binary format.
//
// VOGF layout (little-endian):
//   char[4] "VOGF", u32 P, u32 F, u32 d_v, u32 d_s
//   f32 proposal features  [P][F][d_v]
//   f32 segment features   [F][d_s]
//   f32 boxes              [P][F][5]  (x1, y1, x2, y2, score)

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "vog/corpus.hpp"
#include "vog/error.hpp"

namespace vog {

struct ProposalSet {
  std::string video_id;
  std::size_t P = 0, F = 0, d_v = 0, d_s = 0;
  double width = 0, height = 0;
  std::vector<double> features;  // [P][F][d_v]
  std::vector<double> segments;  // [F][d_s]
  std::vector<Box> boxes;        // [P][F], Box::frame == frame index
  std::vector<double> scores;    // [P][F] detector confidence

  std::size_t at(std::size_t i, std::size_t j) const { return i * F + j; }
  const double* feature(std::size_t i, std::size_t j) const { return features.data() + at(i, j) * d_v; }
  const double* segment(std::size_t j) const { return segments.data() + j * d_s; }
  const Box& box(std::size_t i, std::size_t j) const { return boxes[at(i, j)]; }
  double score(std::size_t i, std::size_t j) const { return scores[at(i, j)]; }

  void check() const {
    if (features.size() != P * F * d_v || segments.size() != F * d_s || boxes.size() != P * F ||
        scores.size() != P * F) {
      throw DataError("proposal set for '" + video_id + "' has inconsistent sizes");
    }
    for (const auto& b : boxes) {
      if (b.x1 < 0 || b.y1 < 0 || b.x2 > width || b.y2 > height) {
        throw DataError("proposal outside frame in video '" + video_id + "'");
      }
    }
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "VOGF I/O assumes a little-endian host");

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}
inline void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  char b[4];
  std::memcpy(b, &f, 4);
  out.append(b, 4);
}

class Reader {
 public:
  Reader(const std::string& data, std::string name) : data_(data), name_(std::move(name)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, data_.data() + pos_, 4);
    pos_ += 4;
    return v;
  }
  double f32() {
    need(4);
    float f;
    std::memcpy(&f, data_.data() + pos_, 4);
    pos_ += 4;
    return f;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError("truncated file '" + name_ + "'");
  }
  const std::string& data_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace detail

inline std::string encode_vogf(const ProposalSet& ps) {
  ps.check();
  std::string out = "VOGF";
  detail::put_u32(out, static_cast<std::uint32_t>(ps.P));
  detail::put_u32(out, static_cast<std::uint32_t>(ps.F));
  detail::put_u32(out, static_cast<std::uint32_t>(ps.d_v));
  detail::put_u32(out, static_cast<std::uint32_t>(ps.d_s));
  for (double v : ps.features) detail::put_f32(out, v);
  for (double v : ps.segments) detail::put_f32(out, v);
  for (std::size_t n = 0; n < ps.boxes.size(); ++n) {
    const auto& b = ps.boxes[n];
    detail::put_f32(out, b.x1);
    detail::put_f32(out, b.y1);
    detail::put_f32(out, b.x2);
    detail::put_f32(out, b.y2);
    detail::put_f32(out, ps.scores[n]);
  }
  return out;
}

inline ProposalSet decode_vogf(const std::string& data, const std::string& video_id, const VideoMeta& meta) {
  detail::Reader r(data, video_id);
  if (r.bytes(4) != "VOGF") throw DataError("bad VOGF magic for '" + video_id + "'");
  ProposalSet ps;
  ps.video_id = video_id;
  ps.P = r.u32();
  ps.F = r.u32();
  ps.d_v = r.u32();
  ps.d_s = r.u32();
  ps.width = meta.width;
  ps.height = meta.height;
  ps.features.resize(ps.P * ps.F * ps.d_v);
  for (auto& v : ps.features) v = r.f32();
  ps.segments.resize(ps.F * ps.d_s);
  for (auto& v : ps.segments) v = r.f32();
  ps.boxes.resize(ps.P * ps.F);
  ps.scores.resize(ps.P * ps.F);
  for (std::size_t i = 0; i < ps.P; ++i)
    for (std::size_t j = 0; j < ps.F; ++j) {
      auto& b = ps.boxes[ps.at(i, j)];
      b.x1 = r.f32();
      b.y1 = r.f32();
      b.x2 = r.f32();
      b.y2 = r.f32();
      b.frame = static_cast<int>(j);
      ps.scores[ps.at(i, j)] = r.f32();
    }
  if (!r.done()) throw DataError("trailing bytes in VOGF file for '" + video_id + "'");
  ps.check();
  return ps;
}

// Rounds every value through f32 so an in-memory set matches what a VOGF
// round trip would produce.
inline void quantize_f32(ProposalSet& ps) {
  auto q = [](double& v) { v = static_cast<float>(v); };
  for (auto& v : ps.features) q(v);
  for (auto& v : ps.segments) q(v);
  for (auto& v : ps.scores) q(v);
  for (auto& b : ps.boxes) {
    q(b.x1);
    q(b.y1);
    q(b.x2);
    q(b.y2);
  }
}

using FeatureStore = std::map<std::string, ProposalSet>;

inline std::string vogf_path(const std::string& dir, const std::string& video_id) {
  return (std::filesystem::path(dir) / (video_id + ".vogf")).string();
}

inline void save_store(const FeatureStore& store, const std::string& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [vid, ps] : store) {
    std::ofstream out(vogf_path(dir, vid), std::ios::binary);
    if (!out) throw DataError("cannot write '" + vogf_path(dir, vid) + "'");
    const auto bytes = encode_vogf(ps);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
}

inline FeatureStore load_store(const Corpus& corpus, const std::string& dir) {
  FeatureStore store;
  for (const auto& [vid, meta] : corpus.videos) {
    const auto path = vogf_path(dir, vid);
    if (!std::filesystem::exists(path)) throw DataError("missing feature file '" + path + "'");
    store.emplace(vid, decode_vogf(detail::read_file(path), vid, meta));
  }
  return store;
}

// Keeps exactly n proposals per frame. In a frame with ground-truth boxes the
// best-IoU proposal for each box is kept first; remaining slots (and every
// slot of an unannotated frame) go to the highest detector scores. Kept
// proposals retain their original relative order.
inline ProposalSet select_proposals_gt5(const ProposalSet& props, const std::vector<Box>& gt_boxes,
                                        std::size_t n = 5) {
  if (props.P < n) {
    throw DataError("gt5: video '" + props.video_id + "' has " + std::to_string(props.P) + " proposals, need " +
                    std::to_string(n));
  }
  ProposalSet out = props;
  out.P = n;
  out.features.assign(n * props.F * props.d_v, 0.0);
  out.boxes.assign(n * props.F, Box{});
  out.scores.assign(n * props.F, 0.0);

  for (std::size_t j = 0; j < props.F; ++j) {
    std::vector<bool> keep(props.P, false);
    std::size_t kept = 0;
    for (const auto& g : gt_boxes) {
      if (g.frame != static_cast<int>(j) || kept == n) continue;
      std::size_t best = props.P;
      double best_iou = -1;
      for (std::size_t i = 0; i < props.P; ++i) {
        if (keep[i]) continue;
        const double v = iou(props.box(i, j), g);
        if (v > best_iou) {
          best_iou = v;
          best = i;
        }
      }
      if (best < props.P) {
        keep[best] = true;
        ++kept;
      }
    }
    std::vector<std::size_t> order(props.P);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return props.score(a, j) > props.score(b, j); });
    for (std::size_t i : order) {
      if (kept == n) break;
      if (!keep[i]) {
        keep[i] = true;
        ++kept;
      }
    }
    std::size_t slot = 0;
    for (std::size_t i = 0; i < props.P; ++i) {
      if (!keep[i]) continue;
      std::copy_n(props.feature(i, j), props.d_v, out.features.begin() + static_cast<std::ptrdiff_t>(out.at(slot, j) * props.d_v));
      out.boxes[out.at(slot, j)] = props.box(i, j);
      out.scores[out.at(slot, j)] = props.score(i, j);
      ++slot;
    }
  }
  return out;
}

// All ground-truth boxes annotated for a video across its queries.
inline std::vector<Box> video_gt_boxes(const Corpus& corpus, const std::string& video_id) {
  std::vector<Box> out;
  for (const auto& q : corpus.queries) {
    if (q.video_id != video_id) continue;
    for (const auto& p : q.phrases) out.insert(out.end(), p.gt_boxes.begin(), p.gt_boxes.end());
  }
  return out;
}

inline FeatureStore apply_gt5(const FeatureStore& store, const Corpus& corpus, std::size_t n = 5) {
  FeatureStore out;
  for (const auto& [vid, ps] : store) out.emplace(vid, select_proposals_gt5(ps, video_gt_boxes(corpus, vid), n));
  return out;
}

}  // namespace vog
