#pragma once

// Synthetic grounding worlds. Every video shows one relation "subject verb
// object": the subject box sits directly above the object box. Clone
// distractors repeat the subject's and object's category and attribute
// elsewhere in the frame, so an appearance-only scorer cannot tell them
// apart; only the relation (what is above or below a box) can.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "vog/assembly.hpp"
#include "vog/corpus.hpp"
#include "vog/error.hpp"
#include "vog/feature_store.hpp"
#include "vog/rng.hpp"
#include "vog/sampler.hpp"

namespace vog {

enum class DistractorPolicy { kNone, kCloneCategory };

struct WorldConfig {
  std::size_t n_train = 64;
  std::size_t n_eval = 32;
  double val_fraction = 0.0;  // of the eval videos; the rest is test
  std::size_t F = 4;
  std::size_t P = 7;
  std::size_t n_subjects = 3;
  std::size_t n_objects = 3;
  std::size_t n_others = 2;
  std::size_t n_attributes = 2;
  std::size_t n_verbs = 3;
  std::size_t clones = 1;  // extra same-category copies of subject and of object
  double sigma = 0.1;
  DistractorPolicy policy = DistractorPolicy::kCloneCategory;
  std::uint64_t seed = 7;

  std::size_t n_videos() const { return n_train + n_eval; }
  std::size_t n_categories() const { return n_subjects + n_objects + n_others; }
  std::size_t d_v() const { return n_categories() + n_attributes; }
  std::size_t d_s() const { return n_verbs; }
  std::size_t clone_count() const { return policy == DistractorPolicy::kCloneCategory ? clones : 0; }
  // related pair + clones + one other-category entity under the first subject clone
  std::size_t n_entities() const { return 2 + 2 * clone_count() + (clone_count() > 0 && n_others > 0 ? 1 : 0); }
};

namespace synth {

inline const std::vector<std::string>& subject_words() {
  static const std::vector<std::string> v{"man", "woman", "boy", "girl", "player", "chef"};
  return v;
}
inline const std::vector<std::string>& object_words() {
  static const std::vector<std::string> v{"dog", "cat", "ball", "box", "cup", "bike"};
  return v;
}
inline const std::vector<std::string>& other_words() {
  static const std::vector<std::string> v{"chair", "table", "lamp", "plant"};
  return v;
}
// lemma, inflected form
inline const std::vector<std::pair<std::string, std::string>>& verb_words() {
  static const std::vector<std::pair<std::string, std::string>> v{
      {"pet", "pets"}, {"hold", "holds"}, {"push", "pushes"}, {"watch", "watches"}, {"carry", "carries"}};
  return v;
}

// Geometry in source pixels.
inline constexpr double kColumn = 64;
inline constexpr double kBoxW = 40;
inline constexpr double kBoxH = 60;
inline constexpr double kTop = 20;
inline constexpr double kGap = 10;
inline constexpr double kHeight = 200;

inline double row_y(int row) { return kTop + row * (kBoxH + kGap); }

}  // namespace synth

struct SceneEntity {
  int id = 0;
  std::size_t category = 0;  // index into the category block of the feature
  std::size_t attribute = 0;
  Box box;  // static over all frames
};

struct SceneRelation {
  std::size_t verb = 0;
  int subject = 0, object = 1;
};

struct Scene {
  std::string video_id;
  int width = 0, height = 0;
  std::vector<SceneEntity> entities;
  SceneRelation relation;
};

struct World {
  WorldConfig config;
  Corpus corpus;
  FeatureStore store;        // features with noise
  FeatureStore clean_store;  // same layout, sigma = 0
  std::vector<Scene> scenes;
};

inline void validate_world_config(const WorldConfig& c) {
  if (c.P < 2) throw ConfigError("world: P must be at least 2");
  if (c.F < 1) throw ConfigError("world: F must be at least 1");
  if (!(c.sigma >= 0)) throw ConfigError("world: sigma must be non-negative");
  if (c.n_subjects > synth::subject_words().size() || c.n_objects > synth::object_words().size() ||
      c.n_others > synth::other_words().size() || c.n_verbs > synth::verb_words().size()) {
    throw ConfigError("world: category or verb count exceeds the built-in vocabulary");
  }
  if (c.n_attributes < 1) throw ConfigError("world: need at least one attribute");
  if (c.n_entities() > c.P) {
    throw ConfigError("world: " + std::to_string(c.n_entities()) + " entities do not fit in P=" + std::to_string(c.P));
  }
  // Contrastive sampling needs alternatives for every slot and enough
  // distinct videos per split to fill a set.
  if (c.n_subjects < 2 || c.n_objects < 2 || c.n_verbs < 2) {
    throw DataError("world: vocabulary too small for contrastive sampling (need >= 2 subjects, objects and verbs)");
  }
  if (c.n_train < kMaxVideos || c.n_eval < kMaxVideos) {
    throw DataError("world: each split needs at least " + std::to_string(kMaxVideos) + " videos");
  }
}

namespace detail {

inline Scene make_scene(const WorldConfig& c, std::size_t v, Rng& rng) {
  Scene s;
  std::ostringstream id;
  id << "synth_" << std::setw(4) << std::setfill('0') << v;
  s.video_id = id.str();

  const std::size_t clones = c.clone_count();
  const std::size_t used_columns = 1 + 2 * clones;
  const std::size_t columns = used_columns + 1 + rng.below(3);
  s.width = static_cast<int>(static_cast<double>(columns) * synth::kColumn);
  s.height = static_cast<int>(synth::kHeight);

  const std::size_t subj = rng.below(c.n_subjects);
  const std::size_t obj = c.n_subjects + rng.below(c.n_objects);
  s.relation.verb = rng.below(c.n_verbs);
  const std::size_t subj_attr = rng.below(c.n_attributes);
  const std::size_t obj_attr = rng.below(c.n_attributes);

  std::vector<std::size_t> slots(columns);
  for (std::size_t i = 0; i < columns; ++i) slots[i] = i;
  rng.shuffle(slots);

  auto place = [&](std::size_t category, std::size_t attribute, std::size_t column, int row) {
    SceneEntity e;
    e.id = static_cast<int>(s.entities.size());
    e.category = category;
    e.attribute = attribute;
    const double x = static_cast<double>(column) * synth::kColumn + (synth::kColumn - synth::kBoxW) / 2;
    const double y = synth::row_y(row);
    e.box = Box{x, y, x + synth::kBoxW, y + synth::kBoxH, 0};
    s.entities.push_back(e);
    return e.id;
  };

  s.relation.subject = place(subj, subj_attr, slots[0], 0);
  s.relation.object = place(obj, obj_attr, slots[0], 1);
  for (std::size_t k = 0; k < clones; ++k) {
    // Subject clones stay in the top row and object clones in the bottom
    // row, so absolute height alone does not single out the related pair.
    const std::size_t col = slots[1 + k];
    place(subj, subj_attr, col, 0);
    if (k == 0 && c.n_others > 0) place(c.n_subjects + c.n_objects + rng.below(c.n_others), rng.below(c.n_attributes), col, 1);
    place(obj, obj_attr, slots[1 + clones + k], 1);
  }
  return s;
}

}  // namespace detail

// Deterministic in the config: layout, noise and split assignment come from
// independent streams derived from config.seed.
inline World gen_world(const WorldConfig& c) {
  validate_world_config(c);
  World w;
  w.config = c;
  std::vector<QueryAnnotation> queries;
  std::map<std::string, VideoMeta> videos;
  const std::size_t n_cat = c.n_categories();

  for (std::size_t v = 0; v < c.n_videos(); ++v) {
    Rng layout(derive_seed({c.seed, v, 1}));
    Rng noise(derive_seed({c.seed, v, 2}));
    Scene scene = detail::make_scene(c, v, layout);

    // Proposals: entities with high detector scores, then background boxes
    // in the floor band with low scores, in shuffled order.
    const std::size_t n_ent = scene.entities.size();
    std::vector<std::size_t> order(c.P);
    for (std::size_t i = 0; i < c.P; ++i) order[i] = i;
    layout.shuffle(order);

    ProposalSet clean;
    clean.video_id = scene.video_id;
    clean.P = c.P;
    clean.F = c.F;
    clean.d_v = c.d_v();
    clean.d_s = c.d_s();
    clean.width = scene.width;
    clean.height = scene.height;
    clean.features.assign(c.P * c.F * clean.d_v, 0.0);
    clean.segments.assign(c.F * clean.d_s, 0.0);
    clean.boxes.assign(c.P * c.F, Box{});
    clean.scores.assign(c.P * c.F, 0.0);

    // Entities are detected only in the key frame, where both roles are
    // annotated; elsewhere every slot holds background clutter. Boxes are
    // static, so an entity visible in several frames would be labelled
    // positive in one of them and negative in the others.
    const std::size_t key_frame = layout.below(c.F);
    std::vector<Box> bg_boxes;
    const double floor_y = synth::row_y(2);
    for (std::size_t b = 0; b < c.P; ++b) {
      const double bw = 12 + 12 * layout.uniform();
      const double x = layout.uniform(0, scene.width - bw);
      const double y = layout.uniform(floor_y, synth::kHeight - 12);
      bg_boxes.push_back(Box{x, y, x + bw, std::min(synth::kHeight, y + 12), 0});
    }
    std::vector<double> ent_score(n_ent), bg_score(c.P);
    for (auto& s : ent_score) s = layout.uniform(0.5, 1.0);
    for (auto& s : bg_score) s = layout.uniform(0.0, 0.4);

    for (std::size_t slot = 0; slot < c.P; ++slot) {
      const std::size_t src = order[slot];
      for (std::size_t j = 0; j < c.F; ++j) {
        const std::size_t at = clean.at(slot, j);
        double* f = clean.features.data() + at * clean.d_v;
        if (src < n_ent && j == key_frame) {
          const auto& e = scene.entities[src];
          f[e.category] = 1.0;
          f[n_cat + e.attribute] = 1.0;
          clean.boxes[at] = e.box;
          clean.scores[at] = ent_score[src];
        } else {
          clean.boxes[at] = bg_boxes[src];
          clean.scores[at] = bg_score[src];
        }
        clean.boxes[at].frame = static_cast<int>(j);
      }
    }
    for (std::size_t j = 0; j < c.F; ++j) clean.segments[j * clean.d_s + scene.relation.verb] = 1.0;

    ProposalSet noisy = clean;
    for (auto& x : noisy.features) x += c.sigma * noise.normal();
    for (auto& x : noisy.segments) x += c.sigma * noise.normal();
    quantize_f32(clean);
    quantize_f32(noisy);

    // Query: "the <subject> <verb>s the <object>", annotated in the key frame.
    const auto& subj = scene.entities[static_cast<std::size_t>(scene.relation.subject)];
    const auto& obj = scene.entities[static_cast<std::size_t>(scene.relation.object)];
    const std::string subj_word = synth::subject_words()[subj.category];
    const std::string obj_word = synth::object_words()[obj.category - c.n_subjects];
    const auto& verb = synth::verb_words()[scene.relation.verb];

    QueryAnnotation q;
    q.id = static_cast<int>(v);
    q.video_id = scene.video_id;
    for (std::size_t j = 0; j < c.F; ++j) q.frames.push_back(static_cast<int>(j));
    q.words = {"the", subj_word, verb.second, "the", obj_word};
    auto phrase = [&](const char* role, int a, int b, const std::string& lemma, const SceneEntity* e) {
      SrlPhrase p;
      p.role = RoleLabel::parse(role);
      p.start = a;
      p.end = b;
      p.text.assign(q.words.begin() + a, q.words.begin() + b);
      p.lemma = lemma;
      if (e) {
        Box g = e->box;
        g.frame = static_cast<int>(key_frame);
        p.gt_boxes.push_back(g);
        p.groundable = true;
      }
      return p;
    };
    q.phrases.push_back(phrase("ARG0", 0, 2, subj_word, &subj));
    q.phrases.push_back(phrase("V", 2, 3, verb.first, nullptr));
    q.phrases.push_back(phrase("ARG1", 3, 5, obj_word, &obj));
    q.split = v < c.n_train ? Split::kTrain : Split::kUnassigned;
    queries.push_back(std::move(q));

    videos[scene.video_id] = VideoMeta{scene.width, scene.height, static_cast<int>(c.F)};
    w.store.emplace(scene.video_id, std::move(noisy));
    w.clean_store.emplace(scene.video_id, std::move(clean));
    w.scenes.push_back(std::move(scene));
  }

  w.corpus = make_splits(make_corpus(std::move(queries), std::move(videos)), c.val_fraction,
                         derive_seed({c.seed, 3}));
  validate_corpus(w.corpus);
  return w;
}

struct BoundReport {
  double strict = 0;  // upper bound on strict accuracy
  double acc = 0;     // upper bound on (per-query averaged) role accuracy
  std::size_t samples = 0;
};

// Best expected success of any scorer that sees one proposal at a time.
// Proposals with identical noise-free inputs (object feature and segment
// feature) must receive identical scores, so within the annotated frame the
// argmax lands uniformly inside the top-scoring class; the best a scorer can
// do per role is the class with the highest share of positives. Samples
// must come from the noise-free store.
inline double role_blind_bound(const AssembledSample& s, std::size_t l) {
  const auto& gts = s.query.phrases[l].gt_boxes;
  if (gts.empty()) return 1.0;
  const auto f = static_cast<std::size_t>(gts.front().frame);
  std::vector<std::vector<double>> keys;
  std::vector<std::size_t> size, pos;
  for (std::size_t i = 0; i < s.num_proposals; ++i) {
    const std::size_t n = s.item(i, f);
    std::vector<double> key(s.features.begin() + static_cast<std::ptrdiff_t>(n * s.d_v),
                            s.features.begin() + static_cast<std::ptrdiff_t>((n + 1) * s.d_v));
    key.insert(key.end(), s.segments.begin() + static_cast<std::ptrdiff_t>(n * s.d_s),
               s.segments.begin() + static_cast<std::ptrdiff_t>((n + 1) * s.d_s));
    auto it = std::find(keys.begin(), keys.end(), key);
    std::size_t c = static_cast<std::size_t>(it - keys.begin());
    if (it == keys.end()) {
      keys.push_back(std::move(key));
      size.push_back(0);
      pos.push_back(0);
    }
    ++size[c];
    pos[c] += s.label(l, n);
  }
  double best = 0;
  for (std::size_t c = 0; c < keys.size(); ++c)
    best = std::max(best, static_cast<double>(pos[c]) / static_cast<double>(size[c]));
  return best;
}

inline BoundReport relation_blind_bound(const std::vector<AssembledSample>& clean_samples) {
  BoundReport r;
  for (const auto& s : clean_samples) {
    double strict = 1, acc = 0;
    std::size_t roles = 0;
    for (std::size_t l = 0; l < s.num_roles(); ++l) {
      if (s.query.phrases[l].gt_boxes.empty()) continue;
      const double b = role_blind_bound(s, l);
      strict *= b;
      acc += b;
      ++roles;
    }
    if (roles == 0) continue;
    r.strict += strict;
    r.acc += acc / static_cast<double>(roles);
    ++r.samples;
  }
  if (r.samples == 0) throw ContractError("relation_blind_bound: no samples with groundable roles");
  r.strict /= static_cast<double>(r.samples);
  r.acc /= static_cast<double>(r.samples);
  return r;
}

// Hand-written scorer that reads the world's structure directly: a proposal
// matches a role when its category and its strip's verb match the query and
// the partner category sits directly below (subject) or above (object) it
// in the same video. Logits are +10 for matches, -10 otherwise.
inline std::vector<double> relational_oracle_logits(const AssembledSample& s, const WorldConfig& c) {
  const std::size_t n_cat = c.n_categories();
  auto category = [&](std::size_t n) -> long {
    const double* f = s.features.data() + n * s.d_v;
    const auto m = std::max_element(f, f + n_cat) - f;
    return f[m] > 0.5 ? static_cast<long>(m) : -1;
  };
  auto verb = [&](std::size_t n) {
    const double* g = s.segments.data() + n * s.d_s;
    return static_cast<std::size_t>(std::max_element(g, g + s.d_s) - g);
  };
  auto index_of = [](const std::vector<std::string>& words, const std::string& w) -> long {
    auto it = std::find(words.begin(), words.end(), w);
    return it == words.end() ? -1 : static_cast<long>(it - words.begin());
  };
  long subj = -1, obj = -1, vb = -1;
  for (const auto& p : s.query.phrases) {
    if (p.role.str() == "Arg0") subj = index_of(synth::subject_words(), p.lemma);
    if (p.role.str() == "Arg1") {
      obj = index_of(synth::object_words(), p.lemma);
      if (obj >= 0) obj += static_cast<long>(c.n_subjects);
    }
    if (p.role.is_verb()) {
      for (std::size_t k = 0; k < synth::verb_words().size(); ++k)
        if (synth::verb_words()[k].first == p.lemma) vb = static_cast<long>(k);
    }
  }
  const std::size_t N = s.num_items();
  std::vector<double> out(s.num_roles() * N, -10.0);
  for (std::size_t l = 0; l < s.num_roles(); ++l) {
    const auto role = s.query.phrases[l].role.str();
    const bool is_subj = role == "Arg0";
    if (!is_subj && role != "Arg1") continue;
    const long want = is_subj ? subj : obj;
    const long partner = is_subj ? obj : subj;
    for (std::size_t n = 0; n < N; ++n) {
      if (category(n) != want || static_cast<long>(verb(n)) != vb) continue;
      const std::size_t j = n / s.num_proposals;
      const Box& a = s.boxes[n];
      bool related = false;
      for (std::size_t i = 0; i < s.num_proposals; ++i) {
        const std::size_t m = s.item(i, j);
        if (m == n || s.membership[m] != s.membership[n] || category(m) != partner) continue;
        const Box& b = s.boxes[m];
        const bool aligned = std::abs(a.x1 - b.x1) < 1e-6 * std::max(1.0, s.canvas_width);
        if (aligned && (is_subj ? b.y1 > a.y1 : b.y1 < a.y1)) related = true;
      }
      if (related) out[l * N + n] = 10.0;
    }
  }
  return out;
}

}  // namespace vog
