#pragma once

// Central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vog/ad/ops.hpp"
#include "vog/ad/tensor.hpp"
#include "vog/rng.hpp"

namespace vog::ad {

struct GradCheckOptions {
  double eps = 1e-4;
  double tol = 1e-4;
  // Denominator floor of the relative error, so coordinates with a
  // vanishing gradient are judged on absolute error instead.
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise at most this many per tensor,
  // drawn with `seed`.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string tensor;
  std::size_t index = 0;
  double analytic = 0, numeric = 0, rel_error = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // coordinates whose +/-eps probes straddle a relu kink
  bool passed = true;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> excluded_coords;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// `f` must rebuild the scalar from the current values of `inputs` each call.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedTensor> inputs,
                                  const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) in.tensor.zero_grad();
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const auto& in : inputs) analytic.emplace_back(in.tensor.grad().begin(), in.tensor.grad().end());

  auto probe = [&](KinkTracker& tracker) {
    KinkTracker* saved = active_kink_tracker();
    active_kink_tracker() = &tracker;
    double v;
    try {
      v = f().item();
    } catch (...) {
      active_kink_tracker() = saved;
      throw;
    }
    active_kink_tracker() = saved;
    return v;
  };

  GradCheckReport rep;
  Rng rng(opt.seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor x = inputs[t].tensor;
    std::vector<std::size_t> coords(x.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (opt.max_coords_per_tensor && coords.size() > opt.max_coords_per_tensor) {
      rng.shuffle(coords);
      coords.resize(opt.max_coords_per_tensor);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      auto vals = x.mutable_values();
      const double orig = vals[i];
      KinkTracker plus, minus;
      vals[i] = orig + opt.eps;
      const double fp = probe(plus);
      vals[i] = orig - opt.eps;
      const double fm = probe(minus);
      vals[i] = orig;
      GradCheckEntry e;
      e.tensor = inputs[t].name;
      e.index = i;
      e.analytic = analytic[t][i];
      e.numeric = (fp - fm) / (2 * opt.eps);
      if (plus.pattern != minus.pattern) {
        ++rep.excluded;
        rep.excluded_coords.push_back(e);
        continue;
      }
      e.rel_error = std::abs(e.analytic - e.numeric) /
                    std::max({std::abs(e.analytic), std::abs(e.numeric), opt.floor});
      ++rep.checked;
      if (e.rel_error >= rep.max_rel_error) {
        rep.max_rel_error = e.rel_error;
        rep.worst = e;
      }
    }
  }
  rep.passed = rep.max_rel_error <= opt.tol;
  return rep;
}

}  // namespace vog::ad
