#pragma once

// Differentiable operators over vog::ad::Tensor.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>


#include "vog/ad/tensor.hpp"

namespace vog::ad {

// Records the sign pattern of every relu input while installed. The gradient
// checker compares patterns at x+eps and x-eps to spot coordinates whose
// finite difference straddles a kink.
struct KinkTracker {
  std::vector<std::uint8_t> pattern;
};

inline KinkTracker*& active_kink_tracker() {
  thread_local KinkTracker* tracker = nullptr;
  return tracker;
}

namespace detail {

inline const std::vector<double>& pv(Node& n, std::size_t k) { return n.parents[k]->value; }
inline bool prg(Node& n, std::size_t k) { return n.parents[k]->requires_grad; }
inline std::vector<double>& pg(Node& n, std::size_t k) { return n.parents[k]->grad_buffer(); }

inline std::size_t norm_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  if (axis < -r || axis >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(axis < 0 ? axis + r : axis);
}

struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

// True when `small` equals a trailing part of `big` (possibly all of it).
inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// C[m,n] += op(A) op(B), row-major, with op = transpose when the flag is set
// (A is then stored [k,m], B [n,k]).
inline void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B,
                 double* C) {
  if (m == 0 || n == 0 || k == 0) return;
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  const auto im = static_cast<Eigen::Index>(m), in = static_cast<Eigen::Index>(n), ik = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> c(C, im, in);
  const CMap a(A, ta ? ik : im, ta ? im : ik), b(B, tb ? in : ik, tb ? ik : in);
  if (ta && tb) {
    c.noalias() += a.transpose() * b.transpose();
  } else if (ta) {
    c.noalias() += a.transpose() * b;
  } else if (tb) {
    c.noalias() += a * b.transpose();
  } else {
    c.noalias() += a * b;
  }
}

template <typename Fwd, typename GradA, typename GradB>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, GradA ga, GradB gb) {
  const bool a_big = is_suffix(b.shape(), a.shape());
  if (!a_big && !is_suffix(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const Shape out_shape = a_big ? a.shape() : b.shape();
  const std::size_t n = numel_of(out_shape);
  const std::size_t na = a.numel(), nb = b.numel();
  // The small operand repeats with period `inner` across the big one.
  const std::size_t inner = std::min(na, nb);
  const std::size_t reps = inner ? n / inner : 0;
  const std::size_t sa = na == n ? inner : 0;  // stride per repetition
  const std::size_t sb = nb == n ? inner : 0;
  std::vector<double> out(n);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  for (std::size_t r = 0; r < reps; ++r) {
    const double* x = av + r * sa;
    const double* y = bv + r * sb;
    double* o = out.data() + r * inner;
    for (std::size_t t = 0; t < inner; ++t) o[t] = fwd(x[t], y[t]);
  }
  return Tensor::make_result(out_shape, std::move(out), {a, b}, [inner, reps, sa, sb, ga, gb](Node& self) {
    const double* x = pv(self, 0).data();
    const double* y = pv(self, 1).data();
    const double* g = self.grad.data();
    if (prg(self, 0)) {
      double* d = pg(self, 0).data();
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t t = 0; t < inner; ++t)
          d[r * sa + t] += ga(x[r * sa + t], y[r * sb + t], g[r * inner + t]);
    }
    if (prg(self, 1)) {
      double* d = pg(self, 1).data();
      for (std::size_t r = 0; r < reps; ++r)
        for (std::size_t t = 0; t < inner; ++t)
          d[r * sb + t] += gb(x[r * sa + t], y[r * sb + t], g[r * inner + t]);
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    const auto& x = pv(self, 0);
    auto& g = pg(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += deriv(x[i], self.value[i]) * self.grad[i];
  });
}

}  // namespace detail

// --- elementwise ------------------------------------------------------------

// Broadcasting rule for binary ops: one operand's shape must be a trailing
// part of the other's (a bias row against a matrix, a scalar against anything).
inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double, double g) { return g; },
      [](double, double, double g) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double, double g) { return g; },
      [](double, double, double g) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y, double g) { return y * g; },
      [](double x, double, double g) { return x * g; });
}

inline Tensor scale(const Tensor& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor relu(const Tensor& a) {
  if (auto* t = active_kink_tracker()) {
    for (double x : a.values()) t->pattern.push_back(x > 0 ? 1 : 0);
  }
  return detail::unary(a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

// Entries where mask is nonzero are replaced by `value` and receive no gradient.
inline Tensor masked_fill(const Tensor& a, const std::vector<std::uint8_t>& mask, double value) {
  if (mask.size() != a.numel()) {
    throw ShapeError("masked_fill: mask of " + std::to_string(mask.size()) + " entries for shape " + shape_str(a.shape()));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i]) out[i] = value;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [mask](Node& self) {
    auto& g = detail::pg(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (!mask[i]) g[i] += self.grad[i];
  });
}

// --- shape ops ---------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [](Node& self) {
    auto& g = detail::pg(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const auto av = a.values();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    auto& g = detail::pg(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& s0 = parts[0].shape();
  const std::size_t ax = detail::norm_axis(axis, s0.size(), "concat");
  Shape out_shape = s0;
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    if (p.rank() != s0.size()) {
      throw ShapeError("concat: rank mismatch " + shape_str(s0) + " vs " + shape_str(p.shape()));
    }
    for (std::size_t d = 0; d < s0.size(); ++d) {
      if (d != ax && p.dim(d) != s0[d]) {
        throw ShapeError("concat: shapes " + shape_str(s0) + " and " + shape_str(p.shape()) + " differ off-axis");
      }
    }
    out_shape[ax] += p.dim(ax);
  }
  const auto split = detail::split_axis(out_shape, ax);
  std::vector<std::size_t> chunk, offset;
  std::size_t off = 0;
  for (const auto& p : parts) {
    chunk.push_back(p.dim(ax) * split.inner);
    offset.push_back(off);
    off += chunk.back();
  }
  const std::size_t row = off;
  std::vector<double> out(numel_of(out_shape));
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * chunk[k]), chunk[k],
                  out.begin() + static_cast<std::ptrdiff_t>(o * row + offset[k]));
  }
  return Tensor::make_result(out_shape, std::move(out), parts, [split, chunk, offset, row](Node& self) {
    for (std::size_t k = 0; k < chunk.size(); ++k) {
      if (!detail::prg(self, k)) continue;
      auto& g = detail::pg(self, k);
      for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t c = 0; c < chunk[k]; ++c) g[o * chunk[k] + c] += self.grad[o * row + offset[k] + c];
    }
  });
}

inline Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = detail::norm_axis(axis, a.rank(), "slice");
  if (begin >= end || end > a.dim(ax)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for " +
                     shape_str(a.shape()));
  }
  const auto split = detail::split_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = end - begin;
  const std::size_t in_row = split.len * split.inner;
  const std::size_t out_row = (end - begin) * split.inner;
  const std::size_t off = begin * split.inner;
  std::vector<double> out(numel_of(out_shape));
  const auto av = a.values();
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(o * in_row + off), out_row,
                out.begin() + static_cast<std::ptrdiff_t>(o * out_row));
  return Tensor::make_result(out_shape, std::move(out), {a}, [split, in_row, out_row, off](Node& self) {
    auto& g = detail::pg(self, 0);
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t c = 0; c < out_row; ++c) g[o * in_row + off + c] += self.grad[o * out_row + c];
  });
}

// Rows of a matrix picked by index (repeats allowed). Doubles as an
// embedding lookup and as a row gather/tile.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& indices) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be a matrix, got " + shape_str(table.shape()));
  const std::size_t d = table.dim(1);
  std::vector<double> out(indices.size() * d);
  const auto tv = table.values();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= table.dim(0)) {
      throw ShapeError("embedding_lookup: index " + std::to_string(indices[r]) + " outside table of " +
                       std::to_string(table.dim(0)) + " rows");
    }
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(indices[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  return Tensor::make_result({indices.size(), d}, std::move(out), {table}, [indices, d](Node& self) {
    auto& g = detail::pg(self, 0);
    for (std::size_t r = 0; r < indices.size(); ++r)
      for (std::size_t c = 0; c < d; ++c) g[indices[r] * d + c] += self.grad[r * d + c];
  });
}

// --- linear algebra ------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm(false, false, m, n, k, a.values().data(), b.values().data(), out.data());
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const double* G = self.grad.data();
    if (detail::prg(self, 0)) detail::gemm(false, true, m, k, n, G, detail::pv(self, 1).data(), detail::pg(self, 0).data());
    if (detail::prg(self, 1)) detail::gemm(true, false, k, n, m, detail::pv(self, 0).data(), G, detail::pg(self, 1).data());
  });
}

// --- reductions and normalizations ----------------------------------------------

inline Tensor softmax(const Tensor& a, int axis = -1) {
  const std::size_t ax = detail::norm_axis(axis, a.rank(), "softmax");
  const auto s = detail::split_axis(a.shape(), ax);
  const auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < s.len; ++l) mx = std::max(mx, av[base + l * s.inner]);
      double z = 0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(av[base + l * s.inner] - mx);
        out[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) out[base + l * s.inner] /= z;
    }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [s](Node& self) {
    auto& g = detail::pg(self, 0);
    const auto& y = self.value;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0;
        for (std::size_t l = 0; l < s.len; ++l) dot += y[base + l * s.inner] * self.grad[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t i = base + l * s.inner;
          g[i] += y[i] * (self.grad[i] - dot);
        }
      }
  });
}

inline Tensor sum(const Tensor& a, int axis) {
  const std::size_t ax = detail::norm_axis(axis, a.rank(), "sum");
  const auto s = detail::split_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += av[(o * s.len + l) * s.inner + in];
  return Tensor::make_result(out_shape, std::move(out), {a}, [s](Node& self) {
    auto& g = detail::pg(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t l = 0; l < s.len; ++l)
        for (std::size_t in = 0; in < s.inner; ++in) g[(o * s.len + l) * s.inner + in] += self.grad[o * s.inner + in];
  });
}

inline Tensor mean(const Tensor& a, int axis) {
  const std::size_t ax = detail::norm_axis(axis, a.rank(), "mean");
  return scale(sum(a, axis), 1.0 / static_cast<double>(a.dim(ax)));
}

inline Tensor sum_all(const Tensor& a) {
  double t = 0;
  for (double v : a.values()) t += v;
  return Tensor::make_result({}, {t}, {a}, [](Node& self) {
    auto& g = detail::pg(self, 0);
    for (auto& x : g) x += self.grad[0];
  });
}

inline Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.numel())); }

// Normalizes over the last axis, then applies per-feature gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-9) {
  if (x.rank() == 0) throw ShapeError("layer_norm: needs at least one axis");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gain/bias " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                     " do not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto xv = x.values();
  const auto gv = gamma.values();
  const auto bv = beta.values();
  std::vector<double> out(x.numel()), xhat(x.numel()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0;
    for (std::size_t c = 0; c < d; ++c) mu += row[c];
    mu /= static_cast<double>(d);
    double var = 0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mu) * inv_std[r];
      xhat[r * d + c] = h;
      out[r * d + c] = gv[c] * h + bv[c];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, gamma, beta},
                             [d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                               const auto& gam = detail::pv(self, 1);
                               const double* G = self.grad.data();
                               if (detail::prg(self, 0)) {
                                 auto& gx = detail::pg(self, 0);
                                 std::vector<double> dh(d);
                                 for (std::size_t r = 0; r < rows; ++r) {
                                   double m1 = 0, m2 = 0;
                                   for (std::size_t c = 0; c < d; ++c) {
                                     dh[c] = G[r * d + c] * gam[c];
                                     m1 += dh[c];
                                     m2 += dh[c] * xhat[r * d + c];
                                   }
                                   m1 /= static_cast<double>(d);
                                   m2 /= static_cast<double>(d);
                                   for (std::size_t c = 0; c < d; ++c)
                                     gx[r * d + c] += inv_std[r] * (dh[c] - m1 - xhat[r * d + c] * m2);
                                 }
                               }
                               if (detail::prg(self, 1)) {
                                 auto& gg = detail::pg(self, 1);
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < d; ++c) gg[c] += G[r * d + c] * xhat[r * d + c];
                               }
                               if (detail::prg(self, 2)) {
                                 auto& gb = detail::pg(self, 2);
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < d; ++c) gb[c] += G[r * d + c];
                               }
                             });
}

// --- losses ------------------------------------------------------------------

// Mean binary cross-entropy over the entries where mask is nonzero, computed
// from logits as max(x,0) - x*t + log(1 + exp(-|x|)).
inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets,
                              const std::vector<std::uint8_t>& mask) {
  if (targets.size() != logits.numel() || mask.size() != logits.numel()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " vs " +
                     std::to_string(targets.size()) + " targets / " + std::to_string(mask.size()) + " mask entries");
  }
  std::size_t count = 0;
  for (auto m : mask) count += m ? 1 : 0;
  if (count == 0) throw ContractError("bce_with_logits: mask selects no entries");
  const auto xv = logits.values();
  double total = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!mask[i]) continue;
    const double x = xv[i];
    total += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  const double inv = 1.0 / static_cast<double>(count);
  return Tensor::make_result({}, {total * inv}, {logits}, [targets, mask, inv](Node& self) {
    const auto& x = detail::pv(self, 0);
    auto& g = detail::pg(self, 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!mask[i]) continue;
      const double s = x[i] >= 0 ? 1.0 / (1.0 + std::exp(-x[i])) : std::exp(x[i]) / (1.0 + std::exp(x[i]));
      g[i] += (s - targets[i]) * inv * self.grad[0];
    }
  });
}

inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  return bce_with_logits(logits, targets, std::vector<std::uint8_t>(logits.numel(), 1));
}

}  // namespace vog::ad
