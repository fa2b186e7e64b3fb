#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace cbc {

/// Lower-triangular Cholesky factor L with L Lᵀ = A + jitter·I, where the
/// jitter starts at 1e-8 and escalates tenfold up to 1e-4 until the
/// factorization succeeds. The jitter actually used is recorded.
struct CholeskyFactor {
  int n = 0;
  std::vector<double> l;  // row-major, lower triangle (upper half unused)
  double jitter = 0.0;

  /// Solves L y = b in place.
  void solve_lower(std::vector<double>& b) const {
    for (int i = 0; i < n; ++i) {
      double acc = b[static_cast<std::size_t>(i)];
      const double* row = l.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < i; ++j) acc -= row[j] * b[static_cast<std::size_t>(j)];
      b[static_cast<std::size_t>(i)] = acc / row[i];
    }
  }

  /// Solves Lᵀ x = b in place.
  void solve_upper(std::vector<double>& b) const {
    for (int i = n - 1; i >= 0; --i) {
      double acc = b[static_cast<std::size_t>(i)];
      for (int j = i + 1; j < n; ++j) {
        acc -= l[static_cast<std::size_t>(j) * n + i] * b[static_cast<std::size_t>(j)];
      }
      b[static_cast<std::size_t>(i)] = acc / l[static_cast<std::size_t>(i) * n + i];
    }
  }
};

namespace detail {

// One factorization attempt of A + jitter·I; false on a non-positive pivot.
inline bool try_cholesky(const std::vector<double>& a, int n, double jitter,
                         std::vector<double>& l) {
  l.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double acc = a[static_cast<std::size_t>(i) * n + j] + (i == j ? jitter : 0.0);
      for (int k = 0; k < j; ++k) {
        acc -= l[static_cast<std::size_t>(i) * n + k] * l[static_cast<std::size_t>(j) * n + k];
      }
      if (i == j) {
        if (!(acc > 0.0) || !std::isfinite(acc)) return false;
        l[static_cast<std::size_t>(i) * n + j] = std::sqrt(acc);
      } else {
        l[static_cast<std::size_t>(i) * n + j] = acc / l[static_cast<std::size_t>(j) * n + j];
      }
    }
  }
  return true;
}

}  // namespace detail

/// Factorizes the symmetric matrix A (row-major n×n). Throws
/// std::runtime_error if even the largest jitter cannot rescue it.
inline CholeskyFactor cholesky_with_jitter(const std::vector<double>& a, int n,
                                           double jitter_start = 1e-8,
                                           double jitter_max = 1e-4) {
  if (n <= 0) throw std::invalid_argument("cholesky_with_jitter: n must be positive");
  if (a.size() != static_cast<std::size_t>(n) * static_cast<std::size_t>(n)) {
    throw std::invalid_argument("cholesky_with_jitter: matrix size does not match n");
  }
  CholeskyFactor f;
  f.n = n;
  for (double jitter = jitter_start; jitter <= jitter_max * (1.0 + 1e-12); jitter *= 10.0) {
    if (detail::try_cholesky(a, n, jitter, f.l)) {
      f.jitter = jitter;
      return f;
    }
  }
  throw std::runtime_error("cholesky_with_jitter: matrix not positive definite after jitter up to " +
                           std::to_string(jitter_max));
}

}  // namespace cbc
