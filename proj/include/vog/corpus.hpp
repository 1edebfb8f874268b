#pragma once

// SRL-annotated grounding corpora: data model, JSONL ingestion, filtering
// heuristics, token alignment, groundability marking and split construction.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "vog/error.hpp"
#include "vog/rng.hpp"

namespace vog {

// ---------------------------------------------------------------------------
// Role labels

class RoleLabel {
 public:
  enum class Kind { kV, kArg0, kArg1, kArg2, kArgMLoc, kArgMTmp, kArgMDir, kOther };

  RoleLabel() = default;
  RoleLabel(Kind kind) : kind_(kind) {}  // NOLINT(google-explicit-constructor)

  // Parses a PropBank-style tag. Case-insensitive for the named variants; any
  // tag that matches a named variant never becomes Other.
  static RoleLabel parse(const std::string& tag) {
    std::string up;
    for (char c : tag) up.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    if (up == "V" || up == "VERB") return Kind::kV;
    if (up == "ARG0") return Kind::kArg0;
    if (up == "ARG1") return Kind::kArg1;
    if (up == "ARG2") return Kind::kArg2;
    if (up == "ARGM-LOC") return Kind::kArgMLoc;
    if (up == "ARGM-TMP") return Kind::kArgMTmp;
    if (up == "ARGM-DIR") return Kind::kArgMDir;
    if (tag.empty()) throw DataError("empty role tag");
    RoleLabel r(Kind::kOther);
    r.tag_ = tag;
    return r;
  }

  Kind kind() const { return kind_; }

  std::string str() const {
    switch (kind_) {
      case Kind::kV: return "V";
      case Kind::kArg0: return "Arg0";
      case Kind::kArg1: return "Arg1";
      case Kind::kArg2: return "Arg2";
      case Kind::kArgMLoc: return "ArgM-LOC";
      case Kind::kArgMTmp: return "ArgM-TMP";
      case Kind::kArgMDir: return "ArgM-DIR";
      case Kind::kOther: return tag_;
    }
    return tag_;
  }

  bool is_verb() const { return kind_ == Kind::kV; }

  // Roles that take part in contrastive sampling: the four most frequently
  // boxed argument roles plus the verb.
  bool is_sampling_role() const {
    return kind_ == Kind::kV || kind_ == Kind::kArg0 || kind_ == Kind::kArg1 ||
           kind_ == Kind::kArg2 || kind_ == Kind::kArgMLoc;
  }

  friend bool operator==(const RoleLabel& a, const RoleLabel& b) {
    return a.kind_ == b.kind_ && a.tag_ == b.tag_;
  }
  friend bool operator<(const RoleLabel& a, const RoleLabel& b) {
    return std::tie(a.kind_, a.tag_) < std::tie(b.kind_, b.tag_);
  }

 private:
  Kind kind_ = Kind::kOther;
  std::string tag_;
};

// ---------------------------------------------------------------------------
// Boxes

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // top-left, bottom-right, pixels
  int frame = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double center_x() const { return 0.5 * (x1 + x2); }
  bool valid() const { return x1 >= 0 && y1 >= 0 && x1 < x2 && y1 < y2; }

  friend bool operator==(const Box&, const Box&) = default;
};

// Intersection over union of the spatial extents; frame indices are ignored.
inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

// A prediction counts as a hit at IoU >= 0.5.
inline constexpr double kIouHit = 0.5;

// ---------------------------------------------------------------------------
// Annotations

enum class Split { kUnassigned, kTrain, kVal, kTest };

inline std::string split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
    case Split::kUnassigned: return "";
  }
  return "";
}

inline Split parse_split(const std::string& s) {
  if (s.empty()) return Split::kUnassigned;
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + s + "'");
}

struct SrlPhrase {
  RoleLabel role;
  int start = 0;  // [start, end) word indices
  int end = 0;
  std::vector<std::string> text;
  std::string lemma;
  bool groundable = false;
  std::vector<Box> gt_boxes;

  friend bool operator==(const SrlPhrase&, const SrlPhrase&) = default;
};

struct QueryAnnotation {
  int id = 0;
  std::string video_id;
  std::vector<int> frames;
  std::vector<std::string> words;
  std::vector<SrlPhrase> phrases;
  Split split = Split::kUnassigned;

  const SrlPhrase& verb() const {
    for (const auto& p : phrases)
      if (p.role.is_verb()) return p;
    throw ContractError("query " + std::to_string(id) + " has no verb");
  }

  std::size_t num_arguments() const {
    return static_cast<std::size_t>(std::count_if(
        phrases.begin(), phrases.end(), [](const SrlPhrase& p) { return !p.role.is_verb(); }));
  }

  friend bool operator==(const QueryAnnotation&, const QueryAnnotation&) = default;
};

struct VideoMeta {
  int width = 0;
  int height = 0;
  int num_frames = 0;

  friend bool operator==(const VideoMeta&, const VideoMeta&) = default;
};

struct Corpus {
  std::vector<QueryAnnotation> queries;
  std::map<std::string, VideoMeta> videos;
  std::string features_ref;
  // Evaluation may draw companions across val and test, never to or from train.
  bool cross_split_eval = false;

  friend bool operator==(const Corpus&, const Corpus&) = default;

  std::vector<std::string> video_ids() const {
    std::vector<std::string> out;
    out.reserve(videos.size());
    for (const auto& [k, _] : videos) out.push_back(k);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline std::string qname(const QueryAnnotation& q) { return "query " + std::to_string(q.id); }

}  // namespace detail

inline void validate_query(const QueryAnnotation& q, const VideoMeta* meta) {
  const int n = static_cast<int>(q.words.size());
  int verbs = 0;
  std::vector<std::pair<int, int>> spans;
  for (const auto& p : q.phrases) {
    if (p.start < 0 || p.start >= p.end || p.end > n) {
      throw DataError(detail::qname(q) + ": span [" + std::to_string(p.start) + "," +
                      std::to_string(p.end) + ") outside " + std::to_string(n) + " words");
    }
    if (p.groundable != !p.gt_boxes.empty()) {
      throw DataError(detail::qname(q) + ": groundable flag disagrees with boxes");
    }
    if (p.role.is_verb()) {
      ++verbs;
      if (p.groundable) throw DataError(detail::qname(q) + ": verb phrase carries boxes");
    }
    for (const auto& b : p.gt_boxes) {
      if (!b.valid()) throw DataError(detail::qname(q) + ": degenerate box");
      if (meta && (b.x2 > meta->width || b.y2 > meta->height)) {
        throw DataError(detail::qname(q) + ": box outside the frame");
      }
      if (b.frame < 0 || (!q.frames.empty() && b.frame >= static_cast<int>(q.frames.size()))) {
        throw DataError(detail::qname(q) + ": box frame index out of range");
      }
    }
    spans.emplace_back(p.start, p.end);
  }
  if (verbs != 1) {
    throw DataError(detail::qname(q) + ": expected exactly one verb, found " + std::to_string(verbs));
  }
  if (q.phrases.size() < 2) throw DataError(detail::qname(q) + ": needs a verb and an argument");
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) {
      throw DataError(detail::qname(q) + ": overlapping phrase spans");
    }
  }
}

inline void validate_corpus(const Corpus& c) {
  for (std::size_t i = 0; i < c.queries.size(); ++i) {
    const auto& q = c.queries[i];
    if (q.id != static_cast<int>(i)) {
      throw DataError("query ids must be dense and unique; position " + std::to_string(i) +
                      " holds id " + std::to_string(q.id));
    }
    auto it = c.videos.find(q.video_id);
    if (it == c.videos.end()) {
      throw DataError(detail::qname(q) + ": unknown video '" + q.video_id + "'");
    }
    validate_query(q, &it->second);
  }
}

// ---------------------------------------------------------------------------
// JSONL (de)serialization

namespace detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline QueryAnnotation query_from_json(const nlohmann::json& j, VideoMeta& meta) {
  QueryAnnotation q;
  q.id = j.at("id").get<int>();
  q.video_id = j.at("video_id").get<std::string>();
  meta.width = j.at("width").get<int>();
  meta.height = j.at("height").get<int>();
  q.frames = j.at("frames").get<std::vector<int>>();
  meta.num_frames = static_cast<int>(q.frames.size());
  q.words = j.at("words").get<std::vector<std::string>>();
  for (const auto& jp : j.at("phrases")) {
    SrlPhrase p;
    p.role = RoleLabel::parse(jp.at("role").get<std::string>());
    const auto span = jp.at("span").get<std::vector<int>>();
    if (span.size() != 2) throw DataError("span must have two entries");
    p.start = span[0];
    p.end = span[1];
    if (p.start >= 0 && p.start < p.end && p.end <= static_cast<int>(q.words.size())) {
      p.text.assign(q.words.begin() + p.start, q.words.begin() + p.end);
    }
    p.lemma = jp.contains("lemma") ? jp.at("lemma").get<std::string>() : std::string();
    if (p.lemma.empty() && !p.text.empty()) p.lemma = lower(p.text.back());
    if (jp.contains("boxes")) {
      for (const auto& jb : jp.at("boxes")) {
        const auto v = jb.get<std::vector<double>>();
        if (v.size() != 5) throw DataError("box must be [x1,y1,x2,y2,frame_idx]");
        p.gt_boxes.push_back(Box{v[0], v[1], v[2], v[3], static_cast<int>(v[4])});
      }
    }
    p.groundable = !p.gt_boxes.empty();
    q.phrases.push_back(std::move(p));
  }
  q.split = parse_split(j.value("split", std::string()));
  return q;
}

}  // namespace detail

inline nlohmann::json query_to_json(const QueryAnnotation& q, const VideoMeta& meta) {
  nlohmann::json j;
  j["id"] = q.id;
  j["video_id"] = q.video_id;
  j["width"] = meta.width;
  j["height"] = meta.height;
  j["frames"] = q.frames;
  j["words"] = q.words;
  auto phrases = nlohmann::json::array();
  for (const auto& p : q.phrases) {
    nlohmann::json jp;
    jp["role"] = p.role.str();
    jp["span"] = {p.start, p.end};
    jp["lemma"] = p.lemma;
    auto boxes = nlohmann::json::array();
    for (const auto& b : p.gt_boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2, b.frame});
    jp["boxes"] = boxes;
    phrases.push_back(jp);
  }
  j["phrases"] = phrases;
  if (q.split != Split::kUnassigned) j["split"] = split_name(q.split);
  return j;
}

inline Corpus parse_corpus(std::istream& in, std::string features_ref = {}) {
  Corpus c;
  c.features_ref = std::move(features_ref);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    QueryAnnotation q;
    VideoMeta meta;
    try {
      q = detail::query_from_json(nlohmann::json::parse(line), meta);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
    auto [it, inserted] = c.videos.emplace(q.video_id, meta);
    if (!inserted && !(it->second == meta)) {
      throw DataError("line " + std::to_string(line_no) + ": video '" + q.video_id +
                      "' has inconsistent dimensions");
    }
    c.queries.push_back(std::move(q));
  }
  validate_corpus(c);
  return c;
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read corpus file '" + path + "'");
  return parse_corpus(in);
}

inline std::string serialize_corpus(const Corpus& c) {
  std::string out;
  for (const auto& q : c.queries) {
    out += query_to_json(q, c.videos.at(q.video_id)).dump();
    out += '\n';
  }
  return out;
}

inline void save_corpus(const Corpus& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus file '" + path + "'");
  out << serialize_corpus(c);
}

// Builds a corpus from a list of queries, renumbering ids densely in order.
inline Corpus make_corpus(std::vector<QueryAnnotation> queries, std::map<std::string, VideoMeta> videos) {
  Corpus c;
  for (std::size_t i = 0; i < queries.size(); ++i) queries[i].id = static_cast<int>(i);
  c.queries = std::move(queries);
  c.videos = std::move(videos);
  validate_corpus(c);
  return c;
}

// ---------------------------------------------------------------------------
// SRL filtering

inline const std::set<std::string>& default_auxiliary_verbs() {
  static const std::set<std::string> kAux = {"is",    "are",   "was",    "were",  "be",    "been",
                                              "seen", "begin", "begins", "start", "starts"};
  return kAux;
}

// Drops auxiliary-verb parses whose arguments are all covered by another
// (non-auxiliary) parse of the same sentence, and parses with no arguments.
// Other parses pass through unchanged.
inline std::vector<QueryAnnotation> filter_srl(
    const std::vector<QueryAnnotation>& raw,
    const std::set<std::string>& auxiliary = default_auxiliary_verbs()) {
  auto is_aux = [&](const QueryAnnotation& q) {
    for (const auto& p : q.phrases)
      if (p.role.is_verb()) return auxiliary.count(detail::lower(p.lemma)) > 0;
    return false;
  };
  auto sentence_key = [](const QueryAnnotation& q) {
    std::string k = q.video_id + '\x1f';
    for (const auto& w : q.words) k += w + '\x1f';
    return k;
  };

  // Surviving main-verb parses, grouped by sentence.
  std::map<std::string, std::vector<const QueryAnnotation*>> anchors;
  for (const auto& q : raw) {
    if (!is_aux(q) && q.num_arguments() > 0) anchors[sentence_key(q)].push_back(&q);
  }

  std::vector<QueryAnnotation> out;
  for (const auto& q : raw) {
    if (q.num_arguments() == 0) continue;
    if (!is_aux(q)) {
      out.push_back(q);
      continue;
    }
    bool independent = false;
    auto it = anchors.find(sentence_key(q));
    for (const auto& arg : q.phrases) {
      if (arg.role.is_verb()) continue;
      bool covered = false;
      if (it != anchors.end()) {
        for (const auto* other : it->second) {
          for (const auto& op : other->phrases) {
            if (arg.start < op.end && op.start < arg.end) covered = true;
          }
        }
      }
      if (!covered) independent = true;
    }
    if (independent) out.push_back(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Token alignment between two tokenizations of the same text

struct Token {
  std::string text;
  std::size_t begin = 0;  // character offsets into the source string
  std::size_t end = 0;
};

using Alignment = std::vector<std::vector<std::size_t>>;

// Maps each src token to the dst tokens whose characters overlap it.
// Whitespace is ignored when comparing the two texts.
inline Alignment align_spans(const std::vector<Token>& src, const std::vector<Token>& dst) {
  auto normalize = [](const std::vector<Token>& toks, std::string& chars,
                      std::vector<std::pair<std::size_t, std::size_t>>& ranges) {
    std::size_t last_end = 0;
    for (const auto& t : toks) {
      if (t.end < t.begin || t.begin < last_end) throw DataError("alignment: token offsets not monotone");
      last_end = t.end;
      const std::size_t b = chars.size();
      for (char c : t.text)
        if (!std::isspace(static_cast<unsigned char>(c))) chars.push_back(c);
      ranges.emplace_back(b, chars.size());
    }
  };
  std::string a, b;
  std::vector<std::pair<std::size_t, std::size_t>> ra, rb;
  normalize(src, a, ra);
  normalize(dst, b, rb);
  if (a != b) throw DataError("alignment: tokenizations cover different texts");

  Alignment out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const auto [s0, s1] = ra[i];
    for (std::size_t j = 0; j < rb.size(); ++j) {
      if (rb[j].first < s1 && s0 < rb[j].second) out[i].push_back(j);
    }
  }
  return out;
}

// Tokens for a whitespace-separated word list, with offsets into the
// single-space join of the words.
inline std::vector<Token> tokens_from_words(const std::vector<std::string>& words) {
  std::vector<Token> out;
  std::size_t pos = 0;
  for (const auto& w : words) {
    out.push_back(Token{w, pos, pos + w.size()});
    pos += w.size() + 1;
  }
  return out;
}

// Object-name annotation attached to one token of the box-annotated
// tokenization.
struct TokenBoxes {
  std::string name;
  std::vector<Box> boxes;
};

inline QueryAnnotation mark_groundable(QueryAnnotation query,
                                       const std::map<std::size_t, TokenBoxes>& box_annotations,
                                       const Alignment& alignment) {
  for (auto& p : query.phrases) {
    if (p.role.is_verb()) continue;
    std::set<std::size_t> hits;
    for (int w = p.start; w < p.end; ++w) {
      if (static_cast<std::size_t>(w) >= alignment.size()) continue;
      for (std::size_t d : alignment[static_cast<std::size_t>(w)]) {
        auto it = box_annotations.find(d);
        if (it != box_annotations.end() && !it->second.boxes.empty()) hits.insert(d);
      }
    }
    p.gt_boxes.clear();
    p.groundable = !hits.empty();
    bool named = false;
    for (std::size_t d : hits) {
      const auto& ann = box_annotations.at(d);
      p.gt_boxes.insert(p.gt_boxes.end(), ann.boxes.begin(), ann.boxes.end());
      if (!named && !ann.name.empty()) {
        p.lemma = ann.name;
        named = true;
      }
    }
  }
  return query;
}

// ---------------------------------------------------------------------------
// Splits

// Queries already labelled train stay in train (together with every other
// query of their video). The remaining videos are divided between val and
// test, val receiving round(val_fraction * pool) of them.
inline Corpus make_splits(Corpus corpus, double val_fraction, std::uint64_t seed) {
  if (corpus.videos.size() < 3) throw DataError("split: need at least 3 videos");
  if (val_fraction < 0 || val_fraction > 1) throw ConfigError("val_fraction must be in [0,1]");

  std::set<std::string> train_videos;
  for (const auto& q : corpus.queries)
    if (q.split == Split::kTrain) train_videos.insert(q.video_id);

  std::vector<std::string> pool;
  for (const auto& [vid, _] : corpus.videos)
    if (!train_videos.count(vid)) pool.push_back(vid);

  Rng rng(derive_seed({seed, 0x5917}));
  rng.shuffle(pool);
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(pool.size())));
  std::map<std::string, Split> assign;
  for (const auto& v : train_videos) assign[v] = Split::kTrain;
  for (std::size_t i = 0; i < pool.size(); ++i) assign[pool[i]] = i < n_val ? Split::kVal : Split::kTest;

  for (auto& q : corpus.queries) q.split = assign.at(q.video_id);
  corpus.cross_split_eval = true;
  return corpus;
}

}  // namespace vog
