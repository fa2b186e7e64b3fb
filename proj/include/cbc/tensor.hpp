#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbc/random.hpp"

namespace cbc {

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("shape dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_to_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

/// Dense n-dimensional array of doubles, row-major. `grad` stays empty
/// until a backward pass writes into it; when present it has the same
/// length as `data`.
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;
  std::vector<double> grad;

  Tensor() = default;

  explicit Tensor(std::vector<int> shape_in, double fill = 0.0)
      : shape(std::move(shape_in)), data(shape_numel(shape), fill) {}

  Tensor(std::vector<int> shape_in, std::vector<double> data_in)
      : shape(std::move(shape_in)), data(std::move(data_in)) {
    if (data.size() != shape_numel(shape)) {
      throw std::invalid_argument("tensor data length does not match shape " +
                                  shape_to_string(shape));
    }
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  std::size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

/// I.i.d. Gaussian tensor; identical (seeded stream, shape) gives
/// bit-identical values.
inline Tensor random_normal(const std::vector<int>& shape, double mean,
                            double stddev, RandomStream& rng) {
  if (stddev < 0.0) throw std::invalid_argument("random_normal: stddev must be >= 0");
  Tensor t(shape);
  for (double& v : t.data) v = rng.normal(mean, stddev);
  return t;
}

}  // namespace cbc
