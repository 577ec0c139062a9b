#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "metadetector/autodiff.hpp"

namespace fd {

inline constexpr double kStep = 1e-5;

// |a − n| / max(|a|, |n|, floor). The floor keeps gradients that are zero up
// to rounding from dominating the ratio.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

struct Report {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

// Central differences of `objective` with respect to every entry of every
// tensor in `params`, compared against `analytic` (same layout, flattened).
inline Report check(std::span<metadet::ad::Tensor* const> params,
                    const std::vector<std::vector<double>>& analytic,
                    const std::function<double()>& objective,
                    double step = kStep) {
  Report r;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto vals = params[p]->values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double orig = vals[i];
      vals[i] = orig + step;
      const double up = objective();
      vals[i] = orig - step;
      const double down = objective();
      vals[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      r.max_rel = std::max(r.max_rel, rel_error(analytic[p][i], numeric));
      ++r.checked;
    }
  }
  return r;
}

inline std::vector<std::vector<double>> grads_of(
    std::span<metadet::ad::Tensor* const> params) {
  std::vector<std::vector<double>> out;
  for (auto* t : params) out.emplace_back(t->grad().begin(), t->grad().end());
  return out;
}

}  // namespace fd
