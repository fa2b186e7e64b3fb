#pragma once

// Ensemble sampling from trained converters, Gaussian-kernel density
// estimation over ensemble columns, and NLL scoring of held-out truth values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cbc/converter.hpp"
#include "cbc/process.hpp"
#include "cbc/random.hpp"

namespace cbc {

/// Minimum KDE bandwidth, in target units. Keeps the density proper (and the
/// NLL finite) when an ensemble column collapses to a point.
inline constexpr double kde_bandwidth_floor = 0.05;

/// Default number of trajectories drawn per trained model when scoring.
inline constexpr std::size_t default_ensemble_size = 256;

/// M trajectories from one model, stored row-major as an M x |I| matrix.
/// Every row lives on the same domain; column j collects the ensemble's
/// values at trajectory index j.
struct EnsembleSamples {
  std::size_t n_samples = 0;
  std::size_t trajectory_size = 0;
  std::vector<double> values;

  double at(std::size_t sample, std::size_t index) const {
    return values[sample * trajectory_size + index];
  }

  std::vector<double> column(std::size_t index) const {
    if (index >= trajectory_size) {
      throw std::invalid_argument("EnsembleSamples::column: index " + std::to_string(index) +
                                  " out of range for trajectory size " +
                                  std::to_string(trajectory_size));
    }
    std::vector<double> out(n_samples);
    for (std::size_t m = 0; m < n_samples; ++m) out[m] = at(m, index);
    return out;
  }
};

/// Draws `n_samples` fresh noise inputs and maps each through the model.
/// Sample m uses the stream derived from (seed, m), so a prefix of the
/// ensemble is independent of how many samples follow it.
inline EnsembleSamples sample_ensemble(const Model& model, std::size_t n_samples,
                                       std::uint64_t seed) {
  if (n_samples == 0) throw std::invalid_argument("sample_ensemble: n_samples must be positive");
  EnsembleSamples out;
  out.n_samples = n_samples;
  for (std::size_t m = 0; m < n_samples; ++m) {
    RandomStream rng(derive_seed(seed, m));
    const Trajectory traj = forward_trajectory(model, sample_noise(model.spec.noise, rng));
    if (m == 0) {
      out.trajectory_size = traj.values.size();
      out.values.reserve(n_samples * out.trajectory_size);
    }
    out.values.insert(out.values.end(), traj.values.begin(), traj.values.end());
  }
  return out;
}

namespace detail {

/// Sample standard deviation with ddof = 1. Requires at least two values.
inline double sample_stddev(const std::vector<double>& values) {
  const std::size_t n = values.size();
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(n - 1));
}

}  // namespace detail

/// Silverman's rule on one sample column, clamped below by the bandwidth
/// floor: h = max(h_floor, 1.06 * sigma_hat * M^(-1/5)).
inline double silverman_bandwidth(const std::vector<double>& samples) {
  if (samples.size() < 2) {
    throw std::invalid_argument("silverman_bandwidth: need at least 2 samples, got " +
                                std::to_string(samples.size()));
  }
  const double sigma = detail::sample_stddev(samples);
  const double h = 1.06 * sigma * std::pow(static_cast<double>(samples.size()), -0.2);
  return std::max(kde_bandwidth_floor, h);
}

/// Gaussian-kernel density estimate over one ensemble column:
/// p(x) = (1/M) sum_m phi_h(x - samples[m]).
struct DensityEstimate {
  std::vector<double> samples;
  double bandwidth = 0.0;

  /// log p(x), evaluated with log-sum-exp so far-tail queries stay finite
  /// in the log domain instead of rounding to -inf prematurely.
  double log_density(double x) const {
    const std::size_t m = samples.size();
    const double inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    double max_exp = -std::numeric_limits<double>::infinity();
    std::vector<double> exps(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double d = x - samples[i];
      exps[i] = -d * d * inv2h2;
      max_exp = std::max(max_exp, exps[i]);
    }
    double acc = 0.0;
    for (double e : exps) acc += std::exp(e - max_exp);
    const double log_norm = std::log(static_cast<double>(m)) + std::log(bandwidth) +
                            0.5 * std::log(2.0 * std::numbers::pi);
    return max_exp + std::log(acc) - log_norm;
  }

  double density(double x) const { return std::exp(log_density(x)); }
};

/// Density with an explicitly chosen bandwidth.
inline DensityEstimate make_density(std::vector<double> samples, double bandwidth) {
  if (samples.size() < 2) {
    throw std::invalid_argument("make_density: need at least 2 samples, got " +
                                std::to_string(samples.size()));
  }
  if (!(bandwidth > 0.0)) throw std::invalid_argument("make_density: bandwidth must be positive");
  return DensityEstimate{std::move(samples), bandwidth};
}

/// Density with the Silverman bandwidth (floored).
inline DensityEstimate make_density(std::vector<double> samples) {
  const double h = silverman_bandwidth(samples);
  return DensityEstimate{std::move(samples), h};
}

/// Per-target NLL scores for one (model, truth, target set) evaluation.
/// The dataset / n_observed / seed fields are carried along for reporting
/// and do not affect the numbers.
struct NllReport {
  std::vector<int> target_indices;
  std::vector<double> per_target_nll;
  double mean_nll = 0.0;
  double stddev_nll = 0.0;
  std::string dataset;
  std::size_t n_observed = 0;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename BandwidthFor>
NllReport kde_nll_impl(const EnsembleSamples& ensemble, const Trajectory& truth,
                       const std::vector<int>& targets, BandwidthFor&& bandwidth_for) {
  if (ensemble.n_samples < 2) {
    throw std::invalid_argument("kde_nll: need at least 2 ensemble samples, got " +
                                std::to_string(ensemble.n_samples));
  }
  if (ensemble.trajectory_size != truth.values.size()) {
    throw std::invalid_argument("kde_nll: ensemble trajectory size " +
                                std::to_string(ensemble.trajectory_size) +
                                " does not match truth size " +
                                std::to_string(truth.values.size()));
  }
  if (targets.empty()) throw std::invalid_argument("kde_nll: target set is empty");

  NllReport report;
  report.target_indices = targets;
  report.per_target_nll.reserve(targets.size());
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= ensemble.trajectory_size) {
      throw std::invalid_argument("kde_nll: target index " + std::to_string(t) +
                                  " out of range for trajectory size " +
                                  std::to_string(ensemble.trajectory_size));
    }
    std::vector<double> column = ensemble.column(static_cast<std::size_t>(t));
    const double h = bandwidth_for(column);
    const DensityEstimate density{std::move(column), h};
    report.per_target_nll.push_back(-density.log_density(truth.values[static_cast<std::size_t>(t)]));
  }

  double mean = 0.0;
  for (double v : report.per_target_nll) mean += v;
  mean /= static_cast<double>(report.per_target_nll.size());
  report.mean_nll = mean;
  report.stddev_nll =
      report.per_target_nll.size() >= 2 ? sample_stddev(report.per_target_nll) : 0.0;
  return report;
}

}  // namespace detail

/// NLL of the truth at each target index under the per-column KDE with the
/// Silverman bandwidth (floored at kde_bandwidth_floor).
inline NllReport kde_nll(const EnsembleSamples& ensemble, const Trajectory& truth,
                         const std::vector<int>& targets) {
  return detail::kde_nll_impl(ensemble, truth, targets,
                              [](const std::vector<double>& column) {
                                return silverman_bandwidth(column);
                              });
}

/// NLL with one fixed bandwidth for every target column. With the bandwidth
/// held fixed, appending the true value to the ensemble can only raise the
/// mixture density at the truth, so this overload is the one monotonicity
/// arguments apply to.
inline NllReport kde_nll(const EnsembleSamples& ensemble, const Trajectory& truth,
                         const std::vector<int>& targets, double bandwidth) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kde_nll: bandwidth must be positive");
  return detail::kde_nll_impl(ensemble, truth, targets,
                              [bandwidth](const std::vector<double>&) { return bandwidth; });
}

/// Columnwise statistics for plotting: mean, sample stddev, and nearest-rank
/// quantiles at 2.5%, 50%, and 97.5%.
struct EnsembleSummary {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<double> q025;
  std::vector<double> median;
  std::vector<double> q975;
};

namespace detail {

/// Nearest-rank quantile of a sorted sample: the ceil(q * M)-th order
/// statistic (1-based), clamped into range.
inline double nearest_rank(const std::vector<double>& sorted, double q) {
  const auto m = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * m));
  rank = std::min(std::max<std::size_t>(rank, 1), sorted.size());
  return sorted[rank - 1];
}

}  // namespace detail

inline EnsembleSummary summarize(const EnsembleSamples& ensemble) {
  if (ensemble.n_samples < 2) {
    throw std::invalid_argument("summarize: need at least 2 ensemble samples, got " +
                                std::to_string(ensemble.n_samples));
  }
  EnsembleSummary summary;
  const std::size_t n = ensemble.trajectory_size;
  summary.mean.resize(n);
  summary.stddev.resize(n);
  summary.q025.resize(n);
  summary.median.resize(n);
  summary.q975.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::vector<double> column = ensemble.column(j);
    double mean = 0.0;
    for (double v : column) mean += v;
    mean /= static_cast<double>(column.size());
    summary.mean[j] = mean;
    summary.stddev[j] = detail::sample_stddev(column);
    std::sort(column.begin(), column.end());
    summary.q025[j] = detail::nearest_rank(column, 0.025);
    summary.median[j] = detail::nearest_rank(column, 0.5);
    summary.q975[j] = detail::nearest_rank(column, 0.975);
  }
  return summary;
}

}  // namespace cbc
