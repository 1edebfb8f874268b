#pragma once

// A hand-built assembled sample and vocabulary small enough for exhaustive
// finite-difference checks of the whole model.

#include "vog/ad/gradcheck.hpp"
#include "vog/assembly.hpp"
#include "vog/model/vognet.hpp"
#include "vog/rng.hpp"

namespace vog {

// A sample with P proposals per frame over F frames, random features and
// positions, and a query "the man pets the dog" (Arg0, V, Arg1) whose Arg0
// box matches proposal 0 of frame 0.
inline AssembledSample micro_sample(std::size_t P, std::size_t F, std::size_t d_v, std::size_t d_s, std::uint64_t seed,
                                    Strategy strategy = Strategy::kSvsq, std::size_t blocks = 1,
                                    bool with_object_role = true) {
  Rng rng(seed);
  AssembledSample s;
  s.strategy = strategy;
  s.num_proposals = P * blocks;
  s.num_frames = F;
  s.d_v = d_v;
  s.d_s = d_s;
  s.canvas_width = 100;
  s.canvas_height = 100;
  for (std::size_t m = 0; m < blocks; ++m) {
    Placement pl;
    pl.video_id = "v" + std::to_string(m);
    pl.query_id = static_cast<int>(m);
    pl.width = pl.height = 100;
    pl.frame_end = F;
    pl.proposal_begin = m * P;
    pl.proposal_end = (m + 1) * P;
    for (std::size_t j = 0; j < F; ++j) pl.frame_map.push_back(static_cast<int>(j));
    s.videos.push_back(pl);
  }
  const std::size_t N = s.num_items();
  for (std::size_t n = 0; n < N * d_v; ++n) s.features.push_back(rng.normal());
  for (std::size_t n = 0; n < N * d_s; ++n) s.segments.push_back(rng.normal());
  for (std::size_t n = 0; n < N; ++n) {
    const double x1 = rng.uniform(0, 60), y1 = rng.uniform(0, 60);
    const Box b{x1, y1, x1 + rng.uniform(5, 40), y1 + rng.uniform(5, 40), static_cast<int>(n / s.num_proposals)};
    s.boxes.push_back(b);
    s.positions.push_back({b.x1 / 100, b.y1 / 100, b.x2 / 100, b.y2 / 100,
                           static_cast<double>(b.frame) / static_cast<double>(F)});
    s.membership.push_back(static_cast<int>((n % s.num_proposals) / P));
  }
  QueryAnnotation q;
  q.video_id = "v0";
  q.words = {"the", "man", "pets", "the", "dog"};
  auto phrase = [&](const char* role, int a, int b, const char* lemma) {
    SrlPhrase p;
    p.role = RoleLabel::parse(role);
    p.start = a;
    p.end = b;
    p.lemma = lemma;
    return p;
  };
  q.phrases = {phrase("ARG0", 0, 2, "man"), phrase("V", 2, 3, "pet")};
  if (with_object_role) q.phrases.push_back(phrase("ARG1", 3, 5, "dog"));
  q.phrases[0].gt_boxes = {s.boxes[0]};
  q.phrases[0].groundable = true;
  s.query = q;
  s.gt = build_gt_labels(s, s.query, &s.positive_roles);
  return s;
}

inline Vocabulary micro_vocab() { return Vocabulary::from_list({"the", "man", "pets", "dog"}); }

// Gradient check of every parameter of a desk-profile VOGNet on a sample
// with k = 2 roles (Arg0, V), P' = 2 proposals and F' = 2 frames.
inline ad::GradCheckReport micro_model_gradcheck(std::uint64_t seed, const ad::GradCheckOptions& opt = {}) {
  constexpr std::size_t d_v = 3, d_s = 2;
  VogModel m(make_model_config(Variant::kVogNet, Profile::kDesk, d_v, d_s), micro_vocab(), seed);
  const auto s = micro_sample(2, 2, d_v, d_s, seed + 1, Strategy::kSvsq, 1, false);
  std::vector<ad::NamedTensor> inputs;
  for (const auto& p : m.params().all()) inputs.push_back({p.name, p.tensor});
  return ad::grad_check([&] { return *m.loss(m.forward(s), s); }, std::move(inputs), opt);
}

}  // namespace vog
