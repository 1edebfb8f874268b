#pragma once

// The grounding network and its two baselines, selected by ModelConfig:
// query encoder with first/last span pooling, visual fusion, object
// transformer, per-frame multi-modal transformer, proposal scorer, loss and
// the verb head used for separate-video evaluation.

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vog/ad/ops.hpp"
#include "vog/ad/params.hpp"
#include "vog/assembly.hpp"
#include "vog/corpus.hpp"
#include "vog/model/config.hpp"
#include "vog/model/layers.hpp"

namespace vog {

using ad::Tensor;

class Vocabulary {
 public:
  static constexpr std::size_t kUnknown = 0;

  Vocabulary() : words_{"<unk>"} {}

  static Vocabulary build(const Corpus& corpus) {
    std::set<std::string> seen;
    for (const auto& q : corpus.queries)
      for (const auto& w : q.words) seen.insert(normalize(w));
    Vocabulary v;
    for (const auto& w : seen) v.add(w);
    return v;
  }

  static Vocabulary from_list(const std::vector<std::string>& words) {
    Vocabulary v;
    for (const auto& w : words)
      if (w != "<unk>") v.add(w);
    return v;
  }

  static std::string normalize(std::string w) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return w;
  }

  std::size_t id(const std::string& w) const {
    auto it = index_.find(normalize(w));
    return it == index_.end() ? kUnknown : it->second;
  }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  void add(const std::string& w) {
    if (index_.count(w)) return;
    index_[w] = words_.size();
    words_.push_back(w);
  }
  std::vector<std::string> words_;
  std::map<std::string, std::size_t> index_;
};

struct Span {
  std::size_t first = 0, last = 0;  // inclusive word indices
};

struct QueryEncoding {
  Tensor hidden;  // [n, 2*d_hidden]
  Tensor roles;   // [k, d_q]
  std::vector<Span> spans;
  std::vector<std::uint8_t> groundable;  // L_g membership per role
};

struct ModelOutput {
  Tensor logits;                     // [k, N], item n = j*P' + i
  std::optional<Tensor> verb_logits; // [videos], separate-video samples only
};

struct ForwardOptions {
  bool zero_delta = false;  // replace every relative-position bias by zeros
};

class VogModel {
 public:
  VogModel(ModelConfig cfg, Vocabulary vocab, std::uint64_t seed) : cfg_(std::move(cfg)), vocab_(std::move(vocab)) {
    cfg_.validate();
    Rng rng(derive_seed({seed, 0x6d6f64656cULL}));
    auto& ps = params_;
    word_emb_ = ps.weight("word_emb", vocab_.size(), cfg_.d_word, rng);
    lstm_ = nn::BiLstm::make(ps, "lstm", cfg_.d_word, cfg_.d_hidden, rng);
    mq_ = nn::Mlp2::make(ps, "mq", 4 * cfg_.d_hidden, cfg_.d_q, cfg_.d_q, nn::Act::kRelu, rng);
    mv_obj_ = nn::Linear::make(ps, "mv.obj", cfg_.d_v, cfg_.d_fused / 2, rng);
    mv_seg_ = nn::Linear::make(ps, "mv.seg", cfg_.d_s, cfg_.d_fused / 2, rng);
    if (cfg_.abs_pos) abs_pos_ = nn::Mlp2::make(ps, "abspos", 5, cfg_.mp_hidden, cfg_.d_fused, nn::Act::kTanh, rng);
    if (cfg_.otx) {
      otx_ = nn::Transformer::make(ps, "otx", cfg_.d_fused, cfg_.n_l, cfg_.n_h, cfg_.head_dim(cfg_.d_fused),
                                   cfg_.ff_mult * cfg_.d_fused, cfg_.ln_eps, cfg_.rpe, cfg_.mp_hidden, cfg_.mp_init_gain, rng);
    }
    if (cfg_.mtx) {
      mtx_ = nn::Transformer::make(ps, "mtx", cfg_.d_mm(), cfg_.n_l, cfg_.n_h, cfg_.head_dim(cfg_.d_mm()),
                                   cfg_.ff_mult * cfg_.d_mm(), cfg_.ln_eps, cfg_.rpe, cfg_.mp_hidden, cfg_.mp_init_gain, rng);
    }
    scorer_ = nn::Mlp2::make(ps, "score", cfg_.d_mm(), cfg_.d_mm(), 1, nn::Act::kRelu, rng);
    if (cfg_.verb_head) {
      verb_seg_ = nn::Linear::make(ps, "verb.seg", cfg_.d_s, cfg_.d_q, rng);
      verb_q_ = nn::Linear::make(ps, "verb.q", cfg_.d_q, cfg_.d_q, rng);
    }
  }

  const ModelConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  ad::ParameterStore& params() { return params_; }
  const ad::ParameterStore& params() const { return params_; }

  // --- language ---------------------------------------------------------------

  QueryEncoding encode_query(const std::vector<std::string>& words, const std::vector<Span>& spans) const {
    if (words.empty()) throw ContractError("encode_query: empty query");
    if (words.size() > cfg_.max_seq_len) {
      throw ContractError("encode_query: " + std::to_string(words.size()) + " words exceed max_seq_len " +
                          std::to_string(cfg_.max_seq_len));
    }
    if (spans.empty()) throw ContractError("encode_query: no roles");
    std::vector<std::size_t> ids;
    for (const auto& w : words) ids.push_back(vocab_.id(w));
    std::vector<std::size_t> ends;
    for (const auto& s : spans) {
      if (s.first > s.last || s.last >= words.size()) {
        throw ContractError("encode_query: span [" + std::to_string(s.first) + "," + std::to_string(s.last) +
                            "] outside a " + std::to_string(words.size()) + "-word query");
      }
      ends.push_back(s.first);
      ends.push_back(s.last);
    }
    QueryEncoding enc;
    enc.hidden = lstm_(ad::embedding_lookup(word_emb_, ids));
    // G_j = [h_first || h_last], gathered as consecutive rows then folded.
    const Tensor g = ad::reshape(ad::embedding_lookup(enc.hidden, ends), {spans.size(), 4 * cfg_.d_hidden});
    enc.roles = mq_(g);
    enc.spans = spans;
    return enc;
  }

  QueryEncoding encode_query(const QueryAnnotation& q) const {
    std::vector<Span> spans;
    for (const auto& p : q.phrases) {
      if (p.start < 0 || p.end <= p.start) throw ContractError("encode_query: empty span in query " + std::to_string(q.id));
      spans.push_back(Span{static_cast<std::size_t>(p.start), static_cast<std::size_t>(p.end - 1)});
    }
    auto enc = encode_query(q.words, spans);
    for (const auto& p : q.phrases) enc.groundable.push_back(p.gt_boxes.empty() ? 0 : 1);
    return enc;
  }

  // --- vision -------------------------------------------------------------------

  // features [N, d_v], segments [N, d_s] -> [N, d_fused]
  Tensor encode_visual(const Tensor& features, const Tensor& segments) const {
    if (features.rank() != 2 || features.dim(1) != cfg_.d_v || segments.rank() != 2 || segments.dim(1) != cfg_.d_s ||
        segments.dim(0) != features.dim(0)) {
      throw ShapeError("encode_visual: features " + ad::shape_str(features.shape()) + " and segments " +
                       ad::shape_str(segments.shape()) + " do not match d_v=" + std::to_string(cfg_.d_v) +
                       ", d_s=" + std::to_string(cfg_.d_s));
    }
    return ad::concat({ad::relu(mv_obj_(features)), ad::relu(mv_seg_(segments))}, 1);
  }

  // Delta[h][a][b] = M_p(pos_a - pos_b)[h]
  nn::HeadBias rpe_delta(const nn::Mlp2& mp, const std::vector<NormalizedPos>& pos) const {
    const std::size_t N = pos.size();
    std::vector<double> diff(N * N * 5);
    for (std::size_t a = 0; a < N; ++a)
      for (std::size_t b = 0; b < N; ++b)
        for (std::size_t c = 0; c < 5; ++c) diff[(a * N + b) * 5 + c] = pos[a][c] - pos[b][c];
    const Tensor out = mp(Tensor({N * N, 5}, std::move(diff)));  // [N*N, n_h]
    nn::HeadBias delta;
    for (std::size_t h = 0; h < cfg_.n_h; ++h) delta.push_back(ad::reshape(ad::slice(out, 1, h, h + 1), {N, N}));
    return delta;
  }

  const nn::Transformer* otx() const { return otx_ ? &*otx_ : nullptr; }
  const nn::Transformer* mtx() const { return mtx_ ? &*mtx_ : nullptr; }

  // Self-attention over all P'F' proposals jointly (within a block for
  // separate-video samples).
  Tensor object_transformer(const Tensor& v, const AssembledSample& s, const ForwardOptions& opt = {}) const {
    if (!otx_) throw ContractError("object_transformer: not part of this model");
    const std::size_t N = s.num_items();
    std::vector<std::size_t> idx(N);
    for (std::size_t n = 0; n < N; ++n) idx[n] = n;
    const auto bias = make_bias(*otx_, s, idx, nullptr, opt);
    return (*otx_)(v, bias ? &*bias : nullptr);
  }

  // m[l*N + n] = [v_sa[n] || q_l]
  Tensor multimodal_fuse(const Tensor& v_sa, const Tensor& roles) const {
    const std::size_t N = v_sa.dim(0), k = roles.dim(0);
    std::vector<std::size_t> vi, qi;
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t n = 0; n < N; ++n) {
        vi.push_back(n);
        qi.push_back(l);
      }
    return ad::concat({ad::embedding_lookup(v_sa, vi), ad::embedding_lookup(roles, qi)}, 1);
  }

  // Per frame: attention over that frame's k*P' fused vectors. Rows keep the
  // multimodal_fuse order.
  Tensor multimodal_transformer(const Tensor& m, const AssembledSample& s, std::size_t k,
                                const ForwardOptions& opt = {}) const {
    if (!mtx_) throw ContractError("multimodal_transformer: not part of this model");
    const std::size_t N = s.num_items(), P = s.num_proposals, F = s.num_frames;
    std::vector<Tensor> frames;
    std::vector<std::size_t> back(k * N);
    for (std::size_t j = 0; j < F; ++j) {
      std::vector<std::size_t> rows, items;
      for (std::size_t l = 0; l < k; ++l)
        for (std::size_t i = 0; i < P; ++i) {
          back[l * N + j * P + i] = j * k * P + rows.size();
          rows.push_back(l * N + j * P + i);
          items.push_back(j * P + i);
        }
      const auto bias = make_bias(*mtx_, s, items, &items, opt, P);
      frames.push_back((*mtx_)(ad::embedding_lookup(m, rows), bias ? &*bias : nullptr));
    }
    return ad::embedding_lookup(F == 1 ? frames[0] : ad::concat(frames, 0), back);
  }

  // rows of m -> logits [k, N]
  Tensor score(const Tensor& m, std::size_t k) const {
    const Tensor out = scorer_(m);
    return ad::reshape(out, {k, out.numel() / k});
  }

  ModelOutput forward(const AssembledSample& s, const ForwardOptions& opt = {}) const {
    if (s.d_v != cfg_.d_v || s.d_s != cfg_.d_s) {
      throw ShapeError("sample feature sizes (" + std::to_string(s.d_v) + "," + std::to_string(s.d_s) +
                       ") do not match the model (" + std::to_string(cfg_.d_v) + "," + std::to_string(cfg_.d_s) + ")");
    }
    const std::size_t N = s.num_items();
    const auto enc = encode_query(s.query);
    const std::size_t k = enc.roles.dim(0);

    Tensor v = encode_visual(Tensor({N, s.d_v}, s.features), Tensor({N, s.d_s}, s.segments));
    if (abs_pos_) {
      std::vector<double> pos;
      for (const auto& p : s.positions) pos.insert(pos.end(), p.begin(), p.end());
      v = ad::add(v, (*abs_pos_)(Tensor({N, 5}, std::move(pos))));
    }
    if (otx_) v = object_transformer(v, s, opt);
    Tensor m = multimodal_fuse(v, enc.roles);
    if (mtx_) m = multimodal_transformer(m, s, k, opt);

    ModelOutput out;
    out.logits = score(m, k);
    if (cfg_.verb_head && s.strategy == Strategy::kSep) out.verb_logits = verb_score(s, enc);
    return out;
  }

  // One logit per video block: projected mean segment feature against the
  // projected verb-role embedding.
  std::optional<Tensor> verb_score(const AssembledSample& s, const QueryEncoding& enc) const {
    if (s.strategy != Strategy::kSep) throw ContractError("verb_score: only defined for separate-video samples");
    if (!cfg_.verb_head) throw ContractError("verb_score: verb head disabled");
    std::optional<std::size_t> verb_role;
    for (std::size_t l = 0; l < s.query.phrases.size(); ++l)
      if (s.query.phrases[l].role.is_verb()) verb_role = l;
    if (!verb_role) return std::nullopt;
    const std::size_t V = s.videos.size();
    std::vector<double> mean(V * s.d_s, 0.0);
    std::vector<double> count(V, 0.0);
    for (std::size_t n = 0; n < s.num_items(); ++n) {
      const auto m = static_cast<std::size_t>(s.membership[n]);
      count[m] += 1;
      for (std::size_t c = 0; c < s.d_s; ++c) mean[m * s.d_s + c] += s.segments[n * s.d_s + c];
    }
    for (std::size_t m = 0; m < V; ++m)
      for (std::size_t c = 0; c < s.d_s; ++c) mean[m * s.d_s + c] /= std::max(count[m], 1.0);
    const Tensor seg = verb_seg_(Tensor({V, s.d_s}, std::move(mean)));
    const Tensor qv = verb_q_(ad::slice(enc.roles, 0, *verb_role, *verb_role + 1));
    return ad::reshape(ad::matmul(seg, ad::transpose(qv)), {V});
  }

  // Mean BCE over the groundable roles (and the verb head when present).
  // Returns nullopt when the sample has no groundable role, meaning skip it.
  std::optional<Tensor> loss(const ModelOutput& out, const AssembledSample& s) const {
    const std::size_t k = out.logits.dim(0), N = out.logits.dim(1);
    if (k != s.num_roles() || N != s.num_items()) {
      throw ShapeError("loss: logits " + ad::shape_str(out.logits.shape()) + " vs sample with " +
                       std::to_string(s.num_roles()) + " roles and " + std::to_string(s.num_items()) + " items");
    }
    std::vector<std::uint8_t> mask(k * N, 0);
    std::vector<double> target(k * N, 0.0);
    bool any = false;
    for (std::size_t l = 0; l < k; ++l) {
      if (s.query.phrases[l].gt_boxes.empty()) continue;
      any = true;
      for (std::size_t n = 0; n < N; ++n) {
        mask[l * N + n] = 1;
        target[l * N + n] = s.label(l, n);
      }
    }
    if (!any) return std::nullopt;
    Tensor total = ad::bce_with_logits(out.logits, target, mask);
    if (out.verb_logits) {
      std::vector<double> t(s.videos.size(), 0.0);
      t[s.anchor_pos] = 1.0;
      total = ad::add(total, ad::bce_with_logits(*out.verb_logits, t));
    }
    return total;
  }

 private:
  // Attention bias for the positions `items` (indices into the sample):
  // relative-position terms when RPE is on, plus -1e9 between different
  // video blocks of a separate-video sample. `rows` replicates a per-item
  // bias across role copies of period `period`.
  std::optional<nn::HeadBias> make_bias(const nn::Transformer& tr, const AssembledSample& s,
                                        const std::vector<std::size_t>& items, const std::vector<std::size_t>* rows,
                                        const ForwardOptions& opt, std::size_t period = 0) const {
    const bool block = s.strategy == Strategy::kSep && s.videos.size() > 1;
    if (!tr.mp && !block) return std::nullopt;
    const std::size_t M = items.size();
    // Unique positions are the first `base` entries (one role copy).
    const std::size_t base = rows ? period : M;
    nn::HeadBias bias;
    if (tr.mp) {
      if (opt.zero_delta) {
        for (std::size_t h = 0; h < cfg_.n_h; ++h) bias.push_back(Tensor::zeros({M, M}));
      } else {
        std::vector<NormalizedPos> pos;
        for (std::size_t a = 0; a < base; ++a) pos.push_back(s.positions[items[a]]);
        bias = rpe_delta(*tr.mp, pos);
        if (base != M) {
          // Tile the per-proposal bias to all role copies.
          std::vector<std::size_t> tile;
          for (std::size_t a = 0; a < M; ++a)
            for (std::size_t b = 0; b < M; ++b) tile.push_back((a % base) * base + (b % base));
          for (auto& d : bias) d = ad::reshape(ad::embedding_lookup(ad::reshape(d, {base * base, 1}), tile), {M, M});
        }
      }
    }
    if (block) {
      std::vector<double> mask(M * M, 0.0);
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b)
          if (s.membership[items[a]] != s.membership[items[b]]) mask[a * M + b] = -1e9;
      const Tensor mt({M, M}, std::move(mask));
      if (bias.empty()) {
        bias.assign(cfg_.n_h, mt);
      } else {
        for (auto& d : bias) d = ad::add(d, mt);
      }
    }
    return bias;
  }

  ModelConfig cfg_;
  Vocabulary vocab_;
  ad::ParameterStore params_;
  Tensor word_emb_;
  nn::BiLstm lstm_;
  nn::Mlp2 mq_;
  nn::Linear mv_obj_, mv_seg_;
  std::optional<nn::Mlp2> abs_pos_;
  std::optional<nn::Transformer> otx_, mtx_;
  nn::Mlp2 scorer_;
  nn::Linear verb_seg_, verb_q_;
};

// Copies every parameter of `src` whose name and shape also exist in `dst`.
inline std::size_t copy_shared_params(const VogModel& src, VogModel& dst) {
  std::size_t copied = 0;
  for (const auto& p : src.params().all()) {
    if (!dst.params().contains(p.name)) continue;
    ad::Tensor d = dst.params().get(p.name);
    if (d.shape() != p.tensor.shape()) continue;
    std::copy(p.tensor.values().begin(), p.tensor.values().end(), d.mutable_values().begin());
    ++copied;
  }
  return copied;
}

}  // namespace vog
