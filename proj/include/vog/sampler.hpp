#pragma once

// Dynamic contrastive sampling over per-role lemma dictionaries, and the
// random-sampling baseline.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vog/corpus.hpp"
#include "vog/error.hpp"
#include "vog/rng.hpp"

namespace vog {

// Which queries an index (or a random pool) may draw from.
struct SplitSelector {
  std::set<Split> splits;

  static SplitSelector all() { return {{Split::kUnassigned, Split::kTrain, Split::kVal, Split::kTest}}; }
  static SplitSelector train() { return {{Split::kTrain}}; }
  // Evaluation pool: val and test together when cross-split sampling is on.
  static SplitSelector eval(const Corpus& c, Split s) {
    if (c.cross_split_eval && (s == Split::kVal || s == Split::kTest)) return {{Split::kVal, Split::kTest}};
    return {{s}};
  }
  bool contains(Split s) const { return splits.count(s) > 0; }
};

using PostingList = std::vector<int>;

struct RoleIndex {
  std::map<RoleLabel, std::map<std::string, PostingList>> dicts;
  const Corpus* corpus = nullptr;
  SplitSelector selector;

  const PostingList* find(const RoleLabel& role, const std::string& lemma) const {
    auto r = dicts.find(role);
    if (r == dicts.end()) return nullptr;
    auto l = r->second.find(lemma);
    return l == r->second.end() ? nullptr : &l->second;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [role, m] : dicts) {
      nlohmann::json jr = nlohmann::json::object();
      for (const auto& [lemma, ids] : m) jr[lemma] = ids;
      j[role.str()] = jr;
    }
    return j;
  }
};

inline RoleIndex build_index(const Corpus& corpus, const SplitSelector& selector) {
  RoleIndex idx;
  idx.corpus = &corpus;
  idx.selector = selector;
  for (const auto& q : corpus.queries) {
    if (!selector.contains(q.split)) continue;
    for (const auto& p : q.phrases) {
      if (!p.role.is_sampling_role()) continue;
      auto& list = idx.dicts[p.role][p.lemma];
      if (list.empty() || list.back() != q.id) list.push_back(q.id);
    }
  }
  for (auto& [_, m] : idx.dicts)
    for (auto& [__, ids] : m) {
      std::sort(ids.begin(), ids.end());
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    }
  return idx;
}

// Slots of a query that may be replaced: phrases whose role participates in
// contrastive sampling and which are either the verb or groundable.
inline std::vector<std::size_t> replaceable_slots(const QueryAnnotation& q) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < q.phrases.size(); ++i) {
    const auto& p = q.phrases[i];
    if (p.role.is_sampling_role() && (p.role.is_verb() || p.groundable)) out.push_back(i);
  }
  return out;
}

namespace detail {

inline std::optional<std::string> lemma_of(const QueryAnnotation& q, const RoleLabel& role) {
  for (const auto& p : q.phrases)
    if (p.role == role) return p.lemma;
  return std::nullopt;
}

}  // namespace detail

// Candidates that agree with the anchor on every sampling-role lemma except
// slot i, where the lemma differs, and come from another video.
inline std::vector<int> candidate_pool(const RoleIndex& index, const QueryAnnotation& anchor, std::size_t slot) {
  if (slot >= anchor.phrases.size()) throw ContractError("candidate_pool: slot out of range");
  if (!index.corpus) throw ContractError("candidate_pool: index has no corpus");
  const auto& replaced = anchor.phrases[slot];

  std::vector<int> pool;
  bool first = true;
  for (std::size_t j = 0; j < anchor.phrases.size(); ++j) {
    if (j == slot) continue;
    const auto& p = anchor.phrases[j];
    if (!p.role.is_sampling_role()) continue;
    const PostingList* list = index.find(p.role, p.lemma);
    if (!list) return {};
    if (first) {
      pool = *list;
      first = false;
    } else {
      std::vector<int> tmp;
      std::set_intersection(pool.begin(), pool.end(), list->begin(), list->end(), std::back_inserter(tmp));
      pool.swap(tmp);
    }
    if (pool.empty()) return {};
  }
  if (first) {
    // No other constraining slot: every indexed query with the replaced role.
    std::set<int> ids;
    auto r = index.dicts.find(replaced.role);
    if (r != index.dicts.end())
      for (const auto& [_, list] : r->second) ids.insert(list.begin(), list.end());
    pool.assign(ids.begin(), ids.end());
  }

  std::vector<int> out;
  for (int id : pool) {
    const auto& q = index.corpus->queries[static_cast<std::size_t>(id)];
    if (q.video_id == anchor.video_id) continue;
    auto lemma = detail::lemma_of(q, replaced.role);
    if (!lemma || *lemma == replaced.lemma) continue;
    out.push_back(id);
  }
  return out;
}

struct Companion {
  int query_id = 0;
  std::optional<std::size_t> replaced_slot;  // nullopt for a random companion

  friend bool operator==(const Companion&, const Companion&) = default;
};

struct ContrastiveSet {
  int anchor = 0;
  std::vector<Companion> companions;

  std::size_t k_total() const { return 1 + companions.size(); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["anchor"] = anchor;
    auto c = nlohmann::json::array();
    for (const auto& m : companions) {
      nlohmann::json jm;
      jm["query"] = m.query_id;
      jm["replaced_slot"] = m.replaced_slot ? nlohmann::json(*m.replaced_slot) : nlohmann::json(nullptr);
      c.push_back(jm);
    }
    j["companions"] = c;
    return j;
  }

  static ContrastiveSet from_json(const nlohmann::json& j) {
    try {
      ContrastiveSet s;
      s.anchor = j.at("anchor");
      for (const auto& jm : j.at("companions")) {
        Companion m;
        m.query_id = jm.at("query");
        if (!jm.at("replaced_slot").is_null()) m.replaced_slot = jm.at("replaced_slot").get<std::size_t>();
        s.companions.push_back(m);
      }
      return s;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("contrastive set: ") + e.what());
    }
  }
};

inline constexpr std::size_t kMaxVideos = 4;
inline constexpr int kMaxRedraws = 16;

namespace detail {

// Fills `set` with random distinct-video companions up to k_total.
inline void pad_random(const Corpus& corpus, const SplitSelector& selector, const QueryAnnotation& anchor,
                       std::size_t k_total, std::set<std::string>& used_videos, ContrastiveSet& set, Rng& rng) {
  if (set.k_total() >= k_total) return;
  std::vector<int> eligible;
  for (const auto& q : corpus.queries) {
    if (selector.contains(q.split) && !used_videos.count(q.video_id)) eligible.push_back(q.id);
  }
  while (set.k_total() < k_total) {
    // Drop entries whose video got used by an earlier pick.
    std::erase_if(eligible, [&](int id) {
      return used_videos.count(corpus.queries[static_cast<std::size_t>(id)].video_id) > 0;
    });
    if (eligible.empty()) {
      throw DataError("sampling: not enough distinct videos for k_total=" + std::to_string(k_total) +
                      " around query " + std::to_string(anchor.id));
    }
    const int id = eligible[rng.below(eligible.size())];
    used_videos.insert(corpus.queries[static_cast<std::size_t>(id)].video_id);
    set.companions.push_back(Companion{id, std::nullopt});
  }
}

}  // namespace detail

inline ContrastiveSet sample_random(const Corpus& corpus, const SplitSelector& selector,
                                    const QueryAnnotation& anchor, std::size_t k_total, Rng& rng) {
  if (k_total == 0) throw ContractError("k_total must be at least 1");
  ContrastiveSet set;
  set.anchor = anchor.id;
  std::set<std::string> used{anchor.video_id};
  detail::pad_random(corpus, selector, anchor, k_total, used, set, rng);
  return set;
}

// One companion per replaceable slot, drawn from its candidate pool; slots
// beyond kMaxVideos-1 are dropped at random and empty pools are padded with
// random distinct-video queries.
inline ContrastiveSet sample_contrastive(const RoleIndex& index, const QueryAnnotation& anchor, Rng& rng,
                                         std::size_t k_total = kMaxVideos) {
  if (!index.corpus) throw ContractError("sample_contrastive: index has no corpus");
  if (k_total == 0 || k_total > kMaxVideos) throw ContractError("k_total must be in [1,4]");
  const Corpus& corpus = *index.corpus;

  ContrastiveSet set;
  set.anchor = anchor.id;
  std::set<std::string> used{anchor.video_id};

  auto slots = replaceable_slots(anchor);
  while (slots.size() > k_total - 1) slots.erase(slots.begin() + static_cast<std::ptrdiff_t>(rng.below(slots.size())));

  for (std::size_t slot : slots) {
    const auto pool = candidate_pool(index, anchor, slot);
    if (pool.empty()) continue;
    for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
      const int id = pool[rng.below(pool.size())];
      const auto& vid = corpus.queries[static_cast<std::size_t>(id)].video_id;
      if (used.count(vid)) continue;
      used.insert(vid);
      set.companions.push_back(Companion{id, slot});
      break;
    }
  }
  detail::pad_random(corpus, index.selector, anchor, k_total, used, set, rng);
  return set;
}

}  // namespace vog
