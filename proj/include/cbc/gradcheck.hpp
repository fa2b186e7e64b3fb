#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbc/random.hpp"
#include "cbc/tensor.hpp"

namespace cbc {

/// Scale-aware gradient discrepancy: |a - n| / max(1, |a| + |n|).
/// Behaves like absolute error near zero and relative error for large values.
inline double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) /
         std::max(1.0, std::fabs(analytic) + std::fabs(numeric));
}

inline double max_relative_error(const std::vector<double>& analytic,
                                 const std::vector<double>& numeric) {
  if (analytic.size() != numeric.size()) {
    throw std::invalid_argument("max_relative_error: vector lengths differ");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i], numeric[i]));
  }
  return worst;
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
  int worst_input = -1;
  std::size_t worst_coord = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central finite differences of `forward` (a scalar function of the current
/// contents of `inputs`) against precomputed analytic gradients, one entry of
/// `analytic` per input tensor. Every coordinate is checked unless the total
/// exceeds `max_coords`, in which case coordinates are drawn uniformly with
/// `rng` (required in that case). Inputs are perturbed in place and restored.
template <typename Forward>
GradCheckReport fd_check(const std::vector<Tensor*>& inputs,
                         const std::vector<std::vector<double>>& analytic,
                         Forward&& forward, double h = 1e-5,
                         std::size_t max_coords = std::numeric_limits<std::size_t>::max(),
                         RandomStream* rng = nullptr) {
  if (inputs.size() != analytic.size()) {
    throw std::invalid_argument("fd_check: analytic gradient count does not match inputs");
  }
  std::size_t total = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (analytic[i].size() != inputs[i]->size()) {
      throw std::invalid_argument("fd_check: analytic gradient " + std::to_string(i) +
                                  " has wrong length");
    }
    total += inputs[i]->size();
  }
  GradCheckReport report;
  auto check_coord = [&](int ti, std::size_t ci) {
    double& slot = inputs[static_cast<std::size_t>(ti)]->data[ci];
    const double saved = slot;
    slot = saved + h;
    const double fp = forward();
    slot = saved - h;
    const double fm = forward();
    slot = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[static_cast<std::size_t>(ti)][ci];
    const double err = relative_error(a, numeric);
    ++report.coords_checked;
    if (err > report.max_rel_err) {
      report.max_rel_err = err;
      report.worst_input = ti;
      report.worst_coord = ci;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  };
  if (total <= max_coords) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      for (std::size_t c = 0; c < inputs[i]->size(); ++c) {
        check_coord(static_cast<int>(i), c);
      }
    }
  } else {
    if (rng == nullptr) {
      throw std::invalid_argument("fd_check: rng required when sampling coordinates");
    }
    for (std::size_t n = 0; n < max_coords; ++n) {
      std::size_t flat = static_cast<std::size_t>(rng->uniform_below(total));
      std::size_t i = 0;
      while (flat >= inputs[i]->size()) {
        flat -= inputs[i]->size();
        ++i;
      }
      check_coord(static_cast<int>(i), flat);
    }
  }
  return report;
}

}  // namespace cbc
