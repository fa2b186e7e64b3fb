#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>

#include "cbc/tensor.hpp"

namespace cbc {

/// A trainable tensor plus its Adam moment estimates. The moment buffers
/// always match the tensor's length; step_count advances by one per
/// optimizer step.
struct Parameter {
  Tensor tensor;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  long step_count = 0;

  Parameter() = default;
  explicit Parameter(Tensor t)
      : tensor(std::move(t)),
        adam_m(tensor.size(), 0.0),
        adam_v(tensor.size(), 0.0) {}
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update over `params`. Requires every parameter
/// to carry a populated gradient; gradients are cleared after the update.
/// Validation happens before any mutation, so a throw leaves all
/// parameters untouched.
inline void adam_step(std::span<Parameter* const> params, const AdamConfig& cfg = {}) {
  for (const Parameter* p : params) {
    if (p->tensor.grad.size() != p->tensor.data.size()) {
      throw std::logic_error("adam_step: parameter gradient is missing");
    }
  }
  for (Parameter* p : params) {
    p->step_count += 1;
    const double bias1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step_count));
    const double bias2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step_count));
    for (std::size_t i = 0; i < p->tensor.data.size(); ++i) {
      const double g = p->tensor.grad[i];
      double& m = p->adam_m[i];
      double& v = p->adam_v[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m / bias1;
      const double v_hat = v / bias2;
      p->tensor.data[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
    p->tensor.grad.clear();
  }
}

inline void adam_step(std::initializer_list<Parameter*> params, const AdamConfig& cfg = {}) {
  adam_step(std::span<Parameter* const>(params.begin(), params.size()), cfg);
}

}  // namespace cbc
