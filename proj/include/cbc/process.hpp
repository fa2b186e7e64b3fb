#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cbc/linalg.hpp"
#include "cbc/random.hpp"
#include "cbc/tape.hpp"

namespace cbc {

/// Evenly spaced 1-D index grid over [x_min, x_max], endpoints included.
struct Grid1D {
  int n = 0;
  double x_min = 0.0;
  double x_max = 6.0 * std::numbers::pi;

  double position(int i) const {
    if (n == 1) return x_min;
    return x_min + (x_max - x_min) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
};

/// Pixel grid; a site is one (row, col) location carrying `channels` values.
struct Grid2D {
  int channels = 1;
  int height = 0;
  int width = 0;
};

using Domain = std::variant<Grid1D, Grid2D>;

/// Flat value count (all channels).
inline int domain_size(const Domain& d) {
  if (const auto* g = std::get_if<Grid1D>(&d)) return g->n;
  const auto& g = std::get<Grid2D>(d);
  return g.channels * g.height * g.width;
}

/// Number of observable sites: grid points in 1-D, pixel locations in 2-D
/// (observing a site exposes every channel there).
inline int site_count(const Domain& d) {
  if (const auto* g = std::get_if<Grid1D>(&d)) return g->n;
  const auto& g = std::get<Grid2D>(d);
  return g.height * g.width;
}

/// Flat value indices covered by one site.
inline std::vector<int> site_indices(const Domain& d, int site) {
  if (site < 0 || site >= site_count(d)) {
    throw std::invalid_argument("site_indices: site " + std::to_string(site) + " out of range");
  }
  if (std::holds_alternative<Grid1D>(d)) return {site};
  const auto& g = std::get<Grid2D>(d);
  std::vector<int> out(static_cast<std::size_t>(g.channels));
  for (int c = 0; c < g.channels; ++c) out[static_cast<std::size_t>(c)] = c * g.height * g.width + site;
  return out;
}

/// One realized path of the process over every index of the domain.
struct Trajectory {
  Domain domain;
  std::vector<double> values;

  Trajectory() = default;
  Trajectory(Domain d, std::vector<double> v) : domain(std::move(d)), values(std::move(v)) {
    if (static_cast<int>(values.size()) != domain_size(domain)) {
      throw std::invalid_argument("Trajectory: value count does not match domain");
    }
  }
};

/// Observed index/value pairs; the complement of the indices is the target
/// set, so S and T always partition the domain.
struct ObservationSet {
  int domain_size = 0;
  std::vector<ObservedValue> entries;  // sorted by index, unique

  std::vector<int> observed_indices() const {
    std::vector<int> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.index);
    return out;
  }

  std::vector<int> target_indices() const {
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(domain_size) - entries.size());
    std::size_t next = 0;
    for (int i = 0; i < domain_size; ++i) {
      if (next < entries.size() && entries[next].index == i) {
        ++next;
      } else {
        out.push_back(i);
      }
    }
    return out;
  }
};

inline ObservationSet make_observation_set(const Trajectory& traj,
                                           const std::vector<int>& indices) {
  ObservationSet s;
  s.domain_size = domain_size(traj.domain);
  s.entries.reserve(indices.size());
  for (int i : indices) {
    if (i < 0 || i >= s.domain_size) {
      throw std::invalid_argument("make_observation_set: index " + std::to_string(i) +
                                  " out of range");
    }
    s.entries.push_back({i, traj.values[static_cast<std::size_t>(i)]});
  }
  std::sort(s.entries.begin(), s.entries.end(),
            [](const ObservedValue& a, const ObservedValue& b) { return a.index < b.index; });
  for (std::size_t i = 1; i < s.entries.size(); ++i) {
    if (s.entries[i].index == s.entries[i - 1].index) {
      throw std::invalid_argument("make_observation_set: duplicate index " +
                                  std::to_string(s.entries[i].index));
    }
  }
  return s;
}

/// Stationary Gaussian process with an RBF kernel on the 1-D grid.
struct GpSpec {
  double sigma = 1.0;
  double ell = 1.0;
  int n = 200;
  double x_min = 0.0;
  double x_max = 6.0 * std::numbers::pi;

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("GpSpec: sigma must be positive");
    if (!(ell > 0.0)) throw std::invalid_argument("GpSpec: ell must be positive");
    if (n < 1) throw std::invalid_argument("GpSpec: n must be positive");
  }
};

/// I.i.d. uniform values on [low, high).
struct UniformSpec {
  double low = -4.0;
  double high = 4.0;
  int n = 200;

  void validate() const {
    if (!(low < high)) throw std::invalid_argument("UniformSpec: low must be below high");
    if (n < 1) throw std::invalid_argument("UniformSpec: n must be positive");
  }
};

/// Two-state chain on {0,1} with symmetric stay probability.
struct MarkovBinarySpec {
  double p_stay = 0.9;
  std::array<double, 2> initial{0.5, 0.5};
  int n = 200;

  void validate() const {
    // p_stay = 1 is a legal absorbing chain for sampling; exact inference
    // additionally requires p_stay < 1 and enforces that itself.
    if (!(p_stay > 0.0) || !(p_stay <= 1.0)) {
      throw std::invalid_argument("MarkovBinarySpec: p_stay must lie in (0,1]");
    }
    if (initial[0] < 0.0 || initial[1] < 0.0 ||
        std::fabs(initial[0] + initial[1] - 1.0) > 1e-12) {
      throw std::invalid_argument("MarkovBinarySpec: initial distribution must sum to 1");
    }
    if (n < 1) throw std::invalid_argument("MarkovBinarySpec: n must be positive");
  }
};

inline double rbf_kernel(double xa, double xb, double sigma, double ell) {
  const double d = (xa - xb) / ell;
  return sigma * sigma * std::exp(-0.5 * d * d);
}

/// One zero-mean draw from N(0, K) where K is the RBF kernel matrix on the
/// grid, via the jittered Cholesky factor: values = L z, z ~ N(0, I).
inline Trajectory sample_gp(const GpSpec& spec, RandomStream& rng) {
  spec.validate();
  const Grid1D grid{spec.n, spec.x_min, spec.x_max};
  const int n = spec.n;
  std::vector<double> k(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      k[static_cast<std::size_t>(i) * n + j] =
          rbf_kernel(grid.position(i), grid.position(j), spec.sigma, spec.ell);
    }
  }
  const CholeskyFactor f = cholesky_with_jitter(k, n);
  std::vector<double> z(static_cast<std::size_t>(n));
  for (double& v : z) v = rng.normal();
  std::vector<double> values(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    const double* row = f.l.data() + static_cast<std::size_t>(i) * n;
    for (int j = 0; j <= i; ++j) acc += row[j] * z[static_cast<std::size_t>(j)];
    values[static_cast<std::size_t>(i)] = acc;
  }
  return Trajectory(grid, std::move(values));
}

inline Trajectory sample_uniform(const UniformSpec& spec, RandomStream& rng) {
  spec.validate();
  std::vector<double> values(static_cast<std::size_t>(spec.n));
  for (double& v : values) v = rng.uniform(spec.low, spec.high);
  return Trajectory(Grid1D{spec.n}, std::move(values));
}

inline Trajectory sample_markov_chain(const MarkovBinarySpec& spec, RandomStream& rng) {
  spec.validate();
  std::vector<double> values(static_cast<std::size_t>(spec.n));
  int state = rng.uniform() < spec.initial[0] ? 0 : 1;
  values[0] = static_cast<double>(state);
  for (int i = 1; i < spec.n; ++i) {
    if (rng.uniform() >= spec.p_stay) state = 1 - state;
    values[static_cast<std::size_t>(i)] = static_cast<double>(state);
  }
  return Trajectory(Grid1D{spec.n}, std::move(values));
}

/// Observes `count` sites drawn uniformly without replacement.
inline ObservationSet select_observations(const Trajectory& traj, int count, RandomStream& rng) {
  const int sites = site_count(traj.domain);
  if (count < 0 || count > sites) {
    throw std::invalid_argument("select_observations: count " + std::to_string(count) +
                                " outside [0, " + std::to_string(sites) + "]");
  }
  std::vector<int> ids(static_cast<std::size_t>(sites));
  for (int i = 0; i < sites; ++i) ids[static_cast<std::size_t>(i)] = i;
  for (int i = 0; i < count; ++i) {
    const int j = i + static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(sites - i)));
    std::swap(ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)]);
  }
  std::vector<int> flat;
  for (int i = 0; i < count; ++i) {
    for (int idx : site_indices(traj.domain, ids[static_cast<std::size_t>(i)])) {
      flat.push_back(idx);
    }
  }
  return make_observation_set(traj, flat);
}

/// Observes the named sites.
inline ObservationSet select_observations(const Trajectory& traj,
                                          const std::vector<int>& positions) {
  std::vector<int> flat;
  for (int site : positions) {
    if (site < 0 || site >= site_count(traj.domain)) {
      throw std::invalid_argument("select_observations: position " + std::to_string(site) +
                                  " out of range");
    }
    for (int idx : site_indices(traj.domain, site)) flat.push_back(idx);
  }
  return make_observation_set(traj, flat);  // rejects duplicates
}

}  // namespace cbc
