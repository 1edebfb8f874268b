#pragma once

// Small hand-built corpora shared by the unit tests.

#include <map>
#include <string>
#include <vector>

#include "vog/corpus.hpp"
#include "vog/feature_store.hpp"
#include "vog/rng.hpp"

namespace vog::testing {

struct PhraseSpec {
  std::string role;
  std::string lemma;
  std::vector<Box> boxes;
};

// A query whose words are the phrase lemmas in order, one word per phrase.
inline QueryAnnotation make_query(const std::string& video, const std::vector<PhraseSpec>& spec,
                                  Split split = Split::kUnassigned, int frames = 4) {
  QueryAnnotation q;
  q.video_id = video;
  for (int f = 0; f < frames; ++f) q.frames.push_back(f);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    q.words.push_back(spec[i].lemma);
    SrlPhrase p;
    p.role = RoleLabel::parse(spec[i].role);
    p.start = static_cast<int>(i);
    p.end = static_cast<int>(i) + 1;
    p.text = {spec[i].lemma};
    p.lemma = spec[i].lemma;
    p.gt_boxes = spec[i].boxes;
    p.groundable = !p.gt_boxes.empty();
    q.phrases.push_back(p);
  }
  q.split = split;
  return q;
}

// Arg0 / V / Arg1 query with one box per argument in frame 0.
inline QueryAnnotation svo(const std::string& video, const std::string& a0, const std::string& v,
                           const std::string& a1, Split split = Split::kUnassigned) {
  return make_query(video, {{"ARG0", a0, {Box{10, 10, 40, 60, 0}}}, {"V", v, {}}, {"ARG1", a1, {Box{50, 20, 90, 70, 0}}}},
                    split);
}

inline std::map<std::string, VideoMeta> videos_of(const std::vector<QueryAnnotation>& qs, int w = 100, int h = 100,
                                                  int frames = 4) {
  std::map<std::string, VideoMeta> out;
  for (const auto& q : qs) out[q.video_id] = VideoMeta{w, h, frames};
  return out;
}

// Random proposals for every video of a corpus; proposal 0 of every frame
// copies the first ground-truth box of the video when there is one.
inline FeatureStore random_store(const Corpus& c, std::size_t P, std::size_t F, std::size_t d_v, std::size_t d_s,
                                 std::uint64_t seed) {
  FeatureStore store;
  Rng rng(seed);
  for (const auto& [vid, meta] : c.videos) {
    ProposalSet ps;
    ps.video_id = vid;
    ps.P = P;
    ps.F = F;
    ps.d_v = d_v;
    ps.d_s = d_s;
    ps.width = meta.width;
    ps.height = meta.height;
    for (std::size_t n = 0; n < P * F * d_v; ++n) ps.features.push_back(rng.normal());
    for (std::size_t n = 0; n < F * d_s; ++n) ps.segments.push_back(rng.normal());
    const auto gts = video_gt_boxes(c, vid);
    for (std::size_t i = 0; i < P; ++i)
      for (std::size_t j = 0; j < F; ++j) {
        Box b;
        if (i == 0 && !gts.empty()) {
          b = gts[0];
        } else {
          const double x1 = rng.uniform(0, ps.width - 2), y1 = rng.uniform(0, ps.height - 2);
          b = Box{x1, y1, rng.uniform(x1 + 1, ps.width), rng.uniform(y1 + 1, ps.height), 0};
        }
        b.frame = static_cast<int>(j);
        ps.boxes.push_back(b);
        ps.scores.push_back(rng.uniform());
      }
    store.emplace(vid, std::move(ps));
  }
  return store;
}

}  // namespace vog::testing

namespace vog::testing {

// A random corpus of n queries over small lemma vocabularies, about two
// queries per video. Roles beyond Arg0/V/Arg1 appear at random so that
// slot counts vary between 2 and 5 replaceable slots.
inline Corpus random_srl_corpus(std::size_t n, std::uint64_t seed, std::size_t vocab = 4) {
  Rng rng(seed);
  auto lemma = [&](const char* prefix) { return std::string(prefix) + std::to_string(rng.below(vocab)); };
  std::vector<QueryAnnotation> qs;
  for (std::size_t t = 0; t < n; ++t) {
    const std::string video = "vid" + std::to_string(t / 2 + rng.below(2));
    const Box b{1, 1, 20, 20, 0};
    std::vector<PhraseSpec> spec = {{"ARG0", lemma("s"), {b}}, {"V", lemma("v"), {}}};
    if (rng.uniform() < 0.8) spec.push_back({"ARG1", lemma("o"), rng.uniform() < 0.9 ? std::vector<Box>{b} : std::vector<Box>{}});
    if (rng.uniform() < 0.3) spec.push_back({"ARG2", lemma("i"), {b}});
    if (rng.uniform() < 0.3) spec.push_back({"ARGM-LOC", lemma("l"), {b}});
    if (rng.uniform() < 0.3) spec.push_back({"ARGM-TMP", lemma("t"), {}});
    qs.push_back(make_query(video, spec));
  }
  return make_corpus(qs, videos_of(qs));
}

}  // namespace vog::testing
