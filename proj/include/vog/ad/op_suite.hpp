#pragma once

// Central-difference checks of every differentiable operator at a random
// point. Each operator output is reduced with fixed random weights so every
// output entry receives a distinct upstream gradient.

#include <functional>
#include <string>
#include <vector>

#include "vog/ad/gradcheck.hpp"
#include "vog/ad/ops.hpp"
#include "vog/rng.hpp"

namespace vog::ad {

struct OperatorCheck {
  std::string op;
  GradCheckReport report;
};

namespace detail {

inline Tensor random_input(Shape s, Rng& rng) {
  std::vector<double> v(numel_of(s));
  for (auto& x : v) x = rng.normal();
  return Tensor(std::move(s), std::move(v), true);
}

inline Tensor probe_sum(const Tensor& t, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(t.numel());
  for (auto& x : w) x = rng.normal();
  return sum_all(mul(t, Tensor(t.shape(), w)));
}

}  // namespace detail

inline std::vector<OperatorCheck> check_operators(std::uint64_t seed, const GradCheckOptions& base = {}) {
  Rng rng(seed);
  const auto probe = rng.next_u64();
  auto a = detail::random_input({3, 4}, rng);
  auto b = detail::random_input({4, 2}, rng);
  auto c = detail::random_input({3, 4}, rng);
  auto row = detail::random_input({4}, rng);
  auto gamma = detail::random_input({4}, rng);
  auto beta = detail::random_input({4}, rng);
  auto t3 = detail::random_input({2, 3, 4}, rng);
  auto wide_a = detail::random_input({9, 256}, rng);
  auto wide_b = detail::random_input({256, 70}, rng);
  std::vector<std::uint8_t> mask(12);
  for (auto& m : mask) m = rng.below(3) == 0;
  std::vector<double> targets(12);
  for (auto& t : targets) t = static_cast<double>(rng.below(2));
  std::vector<std::uint8_t> bmask(12, 1);
  bmask[rng.below(12)] = 0;

  std::vector<OperatorCheck> out;
  auto run = [&](const std::string& op, const std::function<Tensor()>& f, std::vector<NamedTensor> in,
                 std::size_t max_coords = 0) {
    auto opt = base;
    opt.max_coords_per_tensor = max_coords;
    opt.seed = probe;
    out.push_back({op, grad_check(f, std::move(in), opt)});
  };
  using detail::probe_sum;
  run("matmul", [&] { return probe_sum(matmul(a, b), probe); }, {{"a", a}, {"b", b}});
  run("matmul_wide", [&] { return probe_sum(matmul(wide_a, wide_b), probe); }, {{"a", wide_a}, {"b", wide_b}}, 48);
  run("add_broadcast", [&] { return probe_sum(add(a, row), probe); }, {{"a", a}, {"row", row}});
  run("sub_broadcast", [&] { return probe_sum(sub(row, a), probe); }, {{"a", a}, {"row", row}});
  run("mul", [&] { return probe_sum(mul(a, c), probe); }, {{"a", a}, {"c", c}});
  run("mul_broadcast", [&] { return probe_sum(mul(a, row), probe); }, {{"a", a}, {"row", row}});
  run("scale", [&] { return probe_sum(scale(a, -1.7), probe); }, {{"a", a}});
  run("concat_rows", [&] { return probe_sum(concat({a, c}, 0), probe); }, {{"a", a}, {"c", c}});
  run("concat_last", [&] { return probe_sum(concat({t3, t3}, -1), probe); }, {{"t3", t3}});
  run("slice", [&] { return probe_sum(slice(t3, 1, 1, 3), probe); }, {{"t3", t3}});
  run("transpose", [&] { return probe_sum(transpose(a), probe); }, {{"a", a}});
  run("reshape", [&] { return probe_sum(reshape(a, {4, 3}), probe); }, {{"a", a}});
  run("softmax_mid", [&] { return probe_sum(softmax(t3, 1), probe); }, {{"t3", t3}});
  run("softmax_last", [&] { return probe_sum(softmax(a, -1), probe); }, {{"a", a}});
  run("sigmoid", [&] { return probe_sum(sigmoid(a), probe); }, {{"a", a}});
  run("tanh", [&] { return probe_sum(tanh(a), probe); }, {{"a", a}});
  run("relu", [&] { return probe_sum(relu(a), probe); }, {{"a", a}});
  run("layer_norm", [&] { return probe_sum(layer_norm(a, gamma, beta, 1e-9), probe); },
      {{"a", a}, {"gamma", gamma}, {"beta", beta}});
  run("embedding_lookup", [&] { return probe_sum(embedding_lookup(a, {2, 0, 2, 1}), probe); }, {{"a", a}});
  run("masked_fill", [&] { return probe_sum(masked_fill(a, mask, -5.0), probe); }, {{"a", a}});
  run("sum_axis", [&] { return probe_sum(sum(t3, 1), probe); }, {{"t3", t3}});
  run("mean_axis", [&] { return probe_sum(mean(t3, 0), probe); }, {{"t3", t3}});
  run("mean_all", [&] { return mean_all(mul(a, a)); }, {{"a", a}});
  run("bce_with_logits", [&] { return bce_with_logits(a, targets, bmask); }, {{"a", a}});
  return out;
}

}  // namespace vog::ad
