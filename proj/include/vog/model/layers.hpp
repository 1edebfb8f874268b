#pragma once

// Building blocks: affine maps, small MLPs, a bidirectional LSTM and a
// post-norm transformer encoder layer whose attention logits take an
// additive per-head bias.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vog/ad/ops.hpp"
#include "vog/ad/params.hpp"
#include "vog/rng.hpp"

namespace vog::nn {

using ad::Tensor;

struct Linear {
  Tensor w, b;

  static Linear make(ad::ParameterStore& ps, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    return Linear{ps.weight(name + ".w", in, out, rng), ps.bias(name + ".b", out)};
  }
  Tensor operator()(const Tensor& x) const { return ad::add(ad::matmul(x, w), b); }
  std::size_t in() const { return w.dim(0); }
  std::size_t out() const { return w.dim(1); }
};

enum class Act { kRelu, kTanh };

// Two affine maps with a nonlinearity between them.
struct Mlp2 {
  Linear l1, l2;
  Act act = Act::kRelu;

  static Mlp2 make(ad::ParameterStore& ps, const std::string& name, std::size_t in, std::size_t hidden,
                   std::size_t out, Act act, Rng& rng) {
    return Mlp2{Linear::make(ps, name + ".l1", in, hidden, rng), Linear::make(ps, name + ".l2", hidden, out, rng), act};
  }
  Tensor operator()(const Tensor& x) const {
    const Tensor h = l1(x);
    return l2(act == Act::kRelu ? ad::relu(h) : ad::tanh(h));
  }
};

// Single-layer bidirectional LSTM. Output row t is [forward_t || backward_t].
struct BiLstm {
  struct Dir {
    Tensor wx, wh, b;  // gates ordered i, f, g, o
  };
  Dir fw, bw;
  std::size_t hidden = 0;

  static BiLstm make(ad::ParameterStore& ps, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
    auto dir = [&](const std::string& d) {
      return Dir{ps.weight(name + "." + d + ".wx", in, 4 * hidden, rng),
                 ps.weight(name + "." + d + ".wh", hidden, 4 * hidden, rng), ps.bias(name + "." + d + ".b", 4 * hidden)};
    };
    BiLstm l;
    l.fw = dir("fw");
    l.bw = dir("bw");
    l.hidden = hidden;
    return l;
  }

  std::vector<Tensor> run(const Dir& d, const Tensor& x, bool reverse) const {
    const std::size_t n = x.dim(0);
    const Tensor xw = ad::add(ad::matmul(x, d.wx), d.b);  // [n, 4h]
    Tensor h = Tensor::zeros({1, hidden});
    Tensor c = Tensor::zeros({1, hidden});
    std::vector<Tensor> out(n);
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t t = reverse ? n - 1 - s : s;
      const Tensor gates = ad::add(ad::slice(xw, 0, t, t + 1), ad::matmul(h, d.wh));
      const Tensor i = ad::sigmoid(ad::slice(gates, 1, 0, hidden));
      const Tensor f = ad::sigmoid(ad::slice(gates, 1, hidden, 2 * hidden));
      const Tensor g = ad::tanh(ad::slice(gates, 1, 2 * hidden, 3 * hidden));
      const Tensor o = ad::sigmoid(ad::slice(gates, 1, 3 * hidden, 4 * hidden));
      c = ad::add(ad::mul(f, c), ad::mul(i, g));
      h = ad::mul(o, ad::tanh(c));
      out[t] = h;
    }
    return out;
  }

  // x: [n, in] -> [n, 2*hidden]
  Tensor operator()(const Tensor& x) const {
    const auto f = run(fw, x, false);
    const auto b = run(bw, x, true);
    std::vector<Tensor> rows;
    rows.reserve(f.size());
    for (std::size_t t = 0; t < f.size(); ++t) rows.push_back(ad::concat({f[t], b[t]}, 1));
    return ad::concat(rows, 0);
  }
};

// Per-head additive attention bias, one [N, N] tensor per head.
using HeadBias = std::vector<Tensor>;

struct AttentionLayer {
  Linear wq, wk, wv, wo;
  Linear ff1, ff2;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  std::size_t n_h = 1, d_k = 1;
  double ln_eps = 1e-9;

  static AttentionLayer make(ad::ParameterStore& ps, const std::string& name, std::size_t d, std::size_t n_h,
                             std::size_t d_k, std::size_t ff, double ln_eps, Rng& rng) {
    AttentionLayer l;
    l.wq = Linear::make(ps, name + ".wq", d, n_h * d_k, rng);
    l.wk = Linear::make(ps, name + ".wk", d, n_h * d_k, rng);
    l.wv = Linear::make(ps, name + ".wv", d, n_h * d_k, rng);
    l.wo = Linear::make(ps, name + ".wo", n_h * d_k, d, rng);
    l.ff1 = Linear::make(ps, name + ".ff1", d, ff, rng);
    l.ff2 = Linear::make(ps, name + ".ff2", ff, d, rng);
    l.ln1_g = ps.constant(name + ".ln1.g", {d}, 1.0);
    l.ln1_b = ps.bias(name + ".ln1.b", d);
    l.ln2_g = ps.constant(name + ".ln2.g", {d}, 1.0);
    l.ln2_b = ps.bias(name + ".ln2.b", d);
    l.n_h = n_h;
    l.d_k = d_k;
    l.ln_eps = ln_eps;
    return l;
  }

  // Multi-head attention: per head SoftMax((Q K^T + bias[h]) / sqrt(d_k)) V.
  Tensor attend(const Tensor& x, const HeadBias* bias) const {
    const std::size_t N = x.dim(0);
    if (bias) {
      if (bias->size() != n_h) throw ShapeError("attention bias has " + std::to_string(bias->size()) + " heads, layer has " + std::to_string(n_h));
      for (const auto& b : *bias)
        if (b.shape() != ad::Shape{N, N}) throw ShapeError("attention bias " + ad::shape_str(b.shape()) + " vs " + std::to_string(N) + " positions");
    }
    const Tensor q = wq(x), k = wk(x), v = wv(x);
    const double inv = 1.0 / std::sqrt(static_cast<double>(d_k));
    std::vector<Tensor> heads;
    heads.reserve(n_h);
    for (std::size_t h = 0; h < n_h; ++h) {
      const std::size_t a = h * d_k, e = (h + 1) * d_k;
      Tensor logits = ad::matmul(ad::slice(q, 1, a, e), ad::transpose(ad::slice(k, 1, a, e)));
      if (bias) logits = ad::add(logits, (*bias)[h]);
      const Tensor w = ad::softmax(ad::scale(logits, inv), 1);
      heads.push_back(ad::matmul(w, ad::slice(v, 1, a, e)));
    }
    return wo(n_h == 1 ? heads[0] : ad::concat(heads, 1));
  }

  Tensor operator()(const Tensor& x, const HeadBias* bias) const {
    const Tensor x1 = ad::layer_norm(ad::add(x, attend(x, bias)), ln1_g, ln1_b, ln_eps);
    const Tensor f = ff2(ad::relu(ff1(x1)));
    return ad::layer_norm(ad::add(x1, f), ln2_g, ln2_b, ln_eps);
  }
};

// A stack of attention layers sharing one relative-position MLP.
struct Transformer {
  std::vector<AttentionLayer> layers;
  std::optional<Mlp2> mp;  // relative position MLP, present when RPE is on

  static Transformer make(ad::ParameterStore& ps, const std::string& name, std::size_t d, std::size_t n_l,
                          std::size_t n_h, std::size_t d_k, std::size_t ff, double ln_eps, bool rpe,
                          std::size_t mp_hidden, double mp_gain, Rng& rng) {
    Transformer t;
    for (std::size_t l = 0; l < n_l; ++l)
      t.layers.push_back(AttentionLayer::make(ps, name + ".l" + std::to_string(l), d, n_h, d_k, ff, ln_eps, rng));
    if (rpe) {
      t.mp = Mlp2::make(ps, name + ".mp", 5, mp_hidden, n_h, Act::kTanh, rng);
      // Position differences between nearby boxes are a few hundredths of
      // the canvas. A steep first layer with spread-out biases puts them in
      // the curved part of tanh, so locality bumps are reachable early.
      Tensor w = t.mp->l1.w, b = t.mp->l1.b;
      for (double& x : w.mutable_values()) x *= mp_gain;
      for (double& x : b.mutable_values()) x = rng.uniform(-0.3 * mp_gain, 0.3 * mp_gain);
    }
    return t;
  }

  Tensor operator()(Tensor x, const HeadBias* bias) const {
    for (const auto& l : layers) x = l(x, bias);
    return x;
  }
};

}  // namespace vog::nn
