#pragma once

// Named parameters, Xavier initialization, Adam, and the binary checkpoint
// format.
//
// Checkpoint layout (little-endian):
//   char[4] "VOGC", u32 version, u64 manifest length, manifest JSON bytes,
//   u32 parameter count, then per parameter:
//   u32 name length, name bytes, u32 rank, u64 dims[rank], f64 values[numel]

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vog/ad/tensor.hpp"
#include "vog/error.hpp"
#include "vog/rng.hpp"

namespace vog::ad {

struct Parameter {
  std::string name;
  Tensor tensor;
};

class ParameterStore {
 public:
  // Weight matrices get uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
  Tensor weight(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> v(fan_in * fan_out);
    for (auto& x : v) x = rng.uniform(-a, a);
    return add(name, Tensor({fan_in, fan_out}, std::move(v), true));
  }

  Tensor bias(const std::string& name, std::size_t n) { return add(name, Tensor::zeros({n}, true)); }

  Tensor constant(const std::string& name, Shape shape, double value) {
    const auto n = numel_of(shape);
    return add(name, Tensor(std::move(shape), std::vector<double>(n, value), true));
  }

  Tensor add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter name '" + name + "'");
    index_[name] = params_.size();
    params_.push_back(Parameter{name, t});
    return t;
  }

  const std::vector<Parameter>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  const Tensor& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
    return params_[it->second].tensor;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

struct AdamState {
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;
  std::vector<std::vector<double>> m, v;
};

// One Adam update with bias correction. Every parameter must carry a grad
// buffer (zero_grad before the forward pass guarantees that).
inline void adam_step(AdamState& st, ParameterStore& params) {
  const auto& ps = params.all();
  if (st.m.empty()) {
    for (const auto& p : ps) {
      st.m.emplace_back(p.tensor.numel(), 0.0);
      st.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (st.m.size() != ps.size()) throw ContractError("adam: state was built for a different parameter set");
  for (const auto& p : ps)
    if (!p.tensor.has_grad()) throw ContractError("adam: parameter '" + p.name + "' has no gradient");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Tensor t = ps[k].tensor;
    auto val = t.mutable_values();
    auto g = t.grad();
    auto& m = st.m[k];
    auto& v = st.v[k];
    if (m.size() != val.size()) throw ContractError("adam: moment shape mismatch for '" + ps[k].name + "'");
    for (std::size_t i = 0; i < val.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1 - st.beta2) * g[i] * g[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      val[i] -= st.lr * mh / (std::sqrt(vh) + st.eps);
    }
  }
}

// --- checkpoints -------------------------------------------------------------

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.append(b, sizeof(T));
}

class ByteReader {
 public:
  explicit ByteReader(const std::string& d) : d_(d) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, d_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    auto s = d_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > d_.size()) throw DataError("truncated checkpoint");
  }
  const std::string& d_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ParameterStore& params, const std::string& manifest) {
  std::string out = "VOGC";
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint64_t>(out, manifest.size());
  out += manifest;
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params.all()) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out += p.name;
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) detail::put<std::uint64_t>(out, d);
    for (double v : p.tensor.values()) detail::put<double>(out, v);
  }
  return out;
}

struct Checkpoint {
  std::string manifest;
  std::vector<std::pair<std::string, Tensor>> params;
};

inline Checkpoint decode_checkpoint(const std::string& data) {
  detail::ByteReader r(data);
  if (r.str(4) != "VOGC") throw DataError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  ck.manifest = r.str(r.get<std::uint64_t>());
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t k = 0; k < count; ++k) {
    auto name = r.str(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.get<std::uint64_t>());
    std::vector<double> v(numel_of(shape));
    for (auto& x : v) x = r.get<double>();
    ck.params.emplace_back(std::move(name), Tensor(std::move(shape), std::move(v)));
  }
  if (!r.done()) throw DataError("trailing bytes in checkpoint");
  return ck;
}

// Copies checkpoint values into an already-built parameter store; names and
// shapes must match exactly.
inline void load_into(const Checkpoint& ck, ParameterStore& params) {
  if (ck.params.size() != params.size()) {
    throw DataError("checkpoint has " + std::to_string(ck.params.size()) + " parameters, model expects " +
                    std::to_string(params.size()));
  }
  for (const auto& [name, t] : ck.params) {
    if (!params.contains(name)) throw DataError("checkpoint parameter '" + name + "' unknown to the model");
    Tensor dst = params.get(name);
    if (dst.shape() != t.shape()) {
      throw DataError("checkpoint parameter '" + name + "' has shape " + shape_str(t.shape()) + ", model expects " +
                      shape_str(dst.shape()));
    }
    std::copy(t.values().begin(), t.values().end(), dst.mutable_values().begin());
  }
}

}  // namespace vog::ad
