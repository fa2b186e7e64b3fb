#pragma once

// Closed-form reference models: exact GP regression on the 1-D grid and
// exact conditional marginals on the binary Markov chain. Both serve as
// comparison columns in experiment tables and as correctness oracles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbc/density.hpp"
#include "cbc/linalg.hpp"
#include "cbc/process.hpp"
#include "cbc/random.hpp"

namespace cbc {

/// RBF-kernel GP regression settings. `noise` is an observation-noise
/// VARIANCE added to the kernel diagonal and carried into the predictive
/// variance at every target.
struct GpRegressionConfig {
  double sigma = 1.0;
  double ell = 1.0;
  double noise = 1e-4;

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("GpRegressionConfig: sigma must be positive");
    if (!(ell > 0.0)) throw std::invalid_argument("GpRegressionConfig: ell must be positive");
    if (!(noise >= 0.0)) {
      throw std::invalid_argument("GpRegressionConfig: noise must be non-negative");
    }
  }
};

/// Exact posterior mean and predictive variance at each requested target.
struct GpPosterior {
  std::vector<int> target_indices;
  std::vector<double> mean;
  std::vector<double> variance;
};

/// Standard exact GP regression: factor K_SS + (noise + jitter) I once, then
/// read off mean k*^T alpha and variance sigma^2 + noise - ||L^-1 k*||^2 per
/// target. Predictive variance is floored at the jitter actually applied, so
/// it stays strictly positive even when a target coincides with a noiseless
/// observation.
inline GpPosterior gp_posterior(const ObservationSet& obs, const Grid1D& grid,
                                const GpRegressionConfig& cfg, const std::vector<int>& targets) {
  cfg.validate();
  if (obs.domain_size != grid.n) {
    throw std::invalid_argument("gp_posterior: observation domain size " +
                                std::to_string(obs.domain_size) + " does not match grid size " +
                                std::to_string(grid.n));
  }
  for (int t : targets) {
    if (t < 0 || t >= grid.n) {
      throw std::invalid_argument("gp_posterior: target index " + std::to_string(t) +
                                  " out of range for grid size " + std::to_string(grid.n));
    }
  }

  GpPosterior post;
  post.target_indices = targets;
  post.mean.resize(targets.size());
  post.variance.resize(targets.size());

  const double prior_var = cfg.sigma * cfg.sigma + cfg.noise;
  const std::size_t s = obs.entries.size();
  if (s == 0) {
    std::fill(post.mean.begin(), post.mean.end(), 0.0);
    std::fill(post.variance.begin(), post.variance.end(), prior_var);
    return post;
  }

  std::vector<double> k_ss(s * s);
  for (std::size_t i = 0; i < s; ++i) {
    const double xi = grid.position(obs.entries[i].index);
    for (std::size_t j = 0; j < s; ++j) {
      const double xj = grid.position(obs.entries[j].index);
      k_ss[i * s + j] = rbf_kernel(xi, xj, cfg.sigma, cfg.ell) + (i == j ? cfg.noise : 0.0);
    }
  }
  const CholeskyFactor chol = cholesky_with_jitter(k_ss, static_cast<int>(s));

  std::vector<double> alpha(s);
  for (std::size_t i = 0; i < s; ++i) alpha[i] = obs.entries[i].value;
  chol.solve_lower(alpha);
  chol.solve_upper(alpha);

  std::vector<double> k_star(s);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const double xt = grid.position(targets[t]);
    for (std::size_t i = 0; i < s; ++i) {
      k_star[i] = rbf_kernel(grid.position(obs.entries[i].index), xt, cfg.sigma, cfg.ell);
    }
    double mu = 0.0;
    for (std::size_t i = 0; i < s; ++i) mu += k_star[i] * alpha[i];
    chol.solve_lower(k_star);
    double reduction = 0.0;
    for (double w : k_star) reduction += w * w;
    post.mean[t] = mu;
    post.variance[t] = std::max(prior_var - reduction, chol.jitter);
  }
  return post;
}

/// Gaussian NLL of one point: 0.5 log(2 pi v) + (truth - mean)^2 / (2 v).
inline double gaussian_nll_point(double mean, double variance, double truth) {
  if (!(variance > 0.0)) {
    throw std::logic_error("gaussian_nll: variance must be positive, got " +
                           std::to_string(variance));
  }
  const double d = truth - mean;
  return 0.5 * std::log(2.0 * std::numbers::pi * variance) + d * d / (2.0 * variance);
}

/// Scores the truth at each posterior target under the Gaussian predictive.
inline NllReport gaussian_nll(const GpPosterior& posterior, const Trajectory& truth) {
  if (posterior.target_indices.empty()) {
    throw std::invalid_argument("gaussian_nll: posterior has no targets");
  }
  NllReport report;
  report.target_indices = posterior.target_indices;
  report.per_target_nll.reserve(posterior.target_indices.size());
  for (std::size_t t = 0; t < posterior.target_indices.size(); ++t) {
    const auto idx = static_cast<std::size_t>(posterior.target_indices[t]);
    if (idx >= truth.values.size()) {
      throw std::invalid_argument("gaussian_nll: target index " + std::to_string(idx) +
                                  " out of range for truth size " +
                                  std::to_string(truth.values.size()));
    }
    report.per_target_nll.push_back(
        gaussian_nll_point(posterior.mean[t], posterior.variance[t], truth.values[idx]));
  }
  double mean = 0.0;
  for (double v : report.per_target_nll) mean += v;
  mean /= static_cast<double>(report.per_target_nll.size());
  report.mean_nll = mean;
  report.stddev_nll =
      report.per_target_nll.size() >= 2 ? detail::sample_stddev(report.per_target_nll) : 0.0;
  return report;
}

/// Picks the RBF length-scale from `candidates` by exact held-out likelihood:
/// roughly 20% of the observations (at least one) are held out with the
/// stream derived from `seed`, a posterior is fitted on the rest per
/// candidate, and the candidate scoring the lowest held-out NLL wins.
/// With fewer than two observations there is nothing to split; the
/// unit length-scale is returned.
inline double select_length_scale(const ObservationSet& obs, const Grid1D& grid, double sigma,
                                  double noise, std::uint64_t seed,
                                  const std::vector<double>& candidates = {0.5, 1.0, 2.0}) {
  if (candidates.empty()) {
    throw std::invalid_argument("select_length_scale: candidate list is empty");
  }
  if (obs.entries.size() < 2) return 1.0;

  std::vector<std::size_t> order(obs.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  RandomStream rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_below(i)]);
  }
  const std::size_t n_held = std::max<std::size_t>(1, obs.entries.size() / 5);

  ObservationSet kept;
  kept.domain_size = obs.domain_size;
  std::vector<int> held_indices;
  Trajectory held_truth(Grid1D{grid.n, grid.x_min, grid.x_max},
                        std::vector<double>(static_cast<std::size_t>(grid.n), 0.0));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& entry = obs.entries[order[i]];
    if (i < n_held) {
      held_indices.push_back(entry.index);
      held_truth.values[static_cast<std::size_t>(entry.index)] = entry.value;
    } else {
      kept.entries.push_back(entry);
    }
  }
  std::sort(kept.entries.begin(), kept.entries.end(),
            [](const ObservedValue& a, const ObservedValue& b) { return a.index < b.index; });

  double best_ell = candidates.front();
  double best_nll = std::numeric_limits<double>::infinity();
  for (double ell : candidates) {
    const GpRegressionConfig cfg{sigma, ell, noise};
    const NllReport report =
        gaussian_nll(gp_posterior(kept, grid, cfg, held_indices), held_truth);
    if (report.mean_nll < best_nll) {
      best_nll = report.mean_nll;
      best_ell = ell;
    }
  }
  return best_ell;
}

/// Exact conditional marginals P(X_t = 1 | evidence) at every chain index.
/// Observed indices collapse to exactly 0 or 1.
struct ChainMarginals {
  std::vector<double> p_one;
};

/// Forward-backward message passing on the two-state symmetric chain with
/// observed nodes clamped. Messages are renormalized per step, which leaves
/// the conditional marginals unchanged while keeping long chains away from
/// underflow.
inline ChainMarginals chain_conditional_marginals(const ObservationSet& obs,
                                                  const MarkovBinarySpec& spec) {
  spec.validate();
  if (!(spec.p_stay < 1.0)) {
    throw std::invalid_argument(
        "chain_conditional_marginals: exact inference requires p_stay < 1");
  }
  if (obs.domain_size != spec.n) {
    throw std::invalid_argument("chain_conditional_marginals: observation domain size " +
                                std::to_string(obs.domain_size) + " does not match chain length " +
                                std::to_string(spec.n));
  }

  const auto n = static_cast<std::size_t>(spec.n);
  // evidence[t][x] = 1 when state x at index t is consistent with the data.
  std::vector<std::array<double, 2>> evidence(n, {1.0, 1.0});
  for (const auto& entry : obs.entries) {
    if (entry.value != 0.0 && entry.value != 1.0) {
      throw std::invalid_argument("chain_conditional_marginals: observed value " +
                                  std::to_string(entry.value) + " at index " +
                                  std::to_string(entry.index) + " is not binary");
    }
    const int state = entry.value == 1.0 ? 1 : 0;
    evidence[static_cast<std::size_t>(entry.index)] = {0.0, 0.0};
    evidence[static_cast<std::size_t>(entry.index)][static_cast<std::size_t>(state)] = 1.0;
  }

  const double p = spec.p_stay;
  const double q = 1.0 - p;
  auto transition = [p, q](int from, int to) { return from == to ? p : q; };
  auto normalize = [](std::array<double, 2>& m) {
    const double sum = m[0] + m[1];
    if (!(sum > 0.0)) {
      throw std::runtime_error("chain_conditional_marginals: evidence has probability zero");
    }
    m[0] /= sum;
    m[1] /= sum;
  };

  std::vector<std::array<double, 2>> forward(n);
  forward[0] = {spec.initial[0] * evidence[0][0], spec.initial[1] * evidence[0][1]};
  normalize(forward[0]);
  for (std::size_t t = 1; t < n; ++t) {
    for (int x = 0; x < 2; ++x) {
      forward[t][static_cast<std::size_t>(x)] =
          evidence[t][static_cast<std::size_t>(x)] *
          (forward[t - 1][0] * transition(0, x) + forward[t - 1][1] * transition(1, x));
    }
    normalize(forward[t]);
  }

  std::vector<std::array<double, 2>> backward(n, {1.0, 1.0});
  for (std::size_t t = n - 1; t-- > 0;) {
    for (int x = 0; x < 2; ++x) {
      backward[t][static_cast<std::size_t>(x)] =
          transition(x, 0) * evidence[t + 1][0] * backward[t + 1][0] +
          transition(x, 1) * evidence[t + 1][1] * backward[t + 1][1];
    }
    normalize(backward[t]);
  }

  ChainMarginals out;
  out.p_one.resize(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double w0 = forward[t][0] * backward[t][0];
    const double w1 = forward[t][1] * backward[t][1];
    if (!(w0 + w1 > 0.0)) {
      throw std::runtime_error("chain_conditional_marginals: evidence has probability zero");
    }
    out.p_one[t] = w1 / (w0 + w1);
  }
  return out;
}

/// Scores binary truths against exact chain marginals:
/// NLL(t) = -log P(X_t = truth_t | evidence).
inline NllReport chain_nll(const ChainMarginals& marginals, const Trajectory& truth,
                           const std::vector<int>& targets) {
  if (targets.empty()) throw std::invalid_argument("chain_nll: target set is empty");
  NllReport report;
  report.target_indices = targets;
  report.per_target_nll.reserve(targets.size());
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= marginals.p_one.size()) {
      throw std::invalid_argument("chain_nll: target index " + std::to_string(t) +
                                  " out of range for chain length " +
                                  std::to_string(marginals.p_one.size()));
    }
    const double value = truth.values.at(static_cast<std::size_t>(t));
    if (value != 0.0 && value != 1.0) {
      throw std::invalid_argument("chain_nll: truth value " + std::to_string(value) +
                                  " at index " + std::to_string(t) + " is not binary");
    }
    const double p = marginals.p_one[static_cast<std::size_t>(t)];
    report.per_target_nll.push_back(-std::log(value == 1.0 ? p : 1.0 - p));
  }
  double mean = 0.0;
  for (double v : report.per_target_nll) mean += v;
  mean /= static_cast<double>(report.per_target_nll.size());
  report.mean_nll = mean;
  report.stddev_nll =
      report.per_target_nll.size() >= 2 ? detail::sample_stddev(report.per_target_nll) : 0.0;
  return report;
}

}  // namespace cbc
