#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cbc/converter.hpp"
#include "cbc/gradcheck.hpp"
#include "cbc/random.hpp"
#include "cbc/tape.hpp"
#include "cbc/tensor.hpp"

namespace cbc {

struct SuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t coords_checked = 0;
};

struct SuiteReport {
  std::vector<SuiteEntry> entries;

  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_rel_err);
    return w;
  }
  bool passed(double tol) const { return worst() < tol; }
};

namespace detail {

template <typename Graph>
SuiteEntry suite_check(const std::string& name, std::vector<Tensor> inputs, Graph&& graph) {
  SuiteEntry entry;
  entry.name = name;
  std::vector<std::vector<double>> analytic;
  {
    Tape t;
    std::vector<Tape::NodeId> ids;
    for (const Tensor& in : inputs) ids.push_back(t.input(in));
    t.backward(graph(t, ids));
    for (const auto id : ids) analytic.push_back(t.grad(id));
  }
  std::vector<Tensor*> ptrs;
  for (Tensor& in : inputs) ptrs.push_back(&in);
  const auto forward = [&]() {
    Tape t;
    std::vector<Tape::NodeId> ids;
    for (const Tensor& in : inputs) ids.push_back(t.constant(in));
    return t.value(graph(t, ids)).data[0];
  };
  const auto report = fd_check(ptrs, analytic, forward);
  entry.max_rel_err = report.max_rel_err;
  entry.coords_checked = report.coords_checked;
  return entry;
}

inline std::vector<double> suite_weights(std::size_t n, RandomStream& r) {
  std::vector<double> w(n);
  for (double& v : w) v = r.normal();
  return w;
}

/// Full composed converter under the training loss, with gradients checked
/// at `max_coords` sampled parameter coordinates. Instances with a relu
/// preactivation inside the finite-difference straddle zone (|z| close to
/// the step h = 1e-5) are reseeded; a straddled kink makes the two-sided
/// difference disagree with the true one-sided gradient for reasons that
/// are not bugs.
inline SuiteEntry suite_check_network(const ConverterSpec& spec, std::uint64_t seed,
                                      std::size_t max_coords) {
  SuiteEntry entry;
  entry.name = spec.name;
  const bool bounded = spec.output_activation == OutputActivation::sigmoid;
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    Model model = build_converter(spec, derive_seed(seed, 2 * attempt));
    RandomStream rng = RandomStream::derive(seed, 2 * attempt + 1);

    std::vector<Tensor> omegas;
    for (int b = 0; b < 2; ++b) omegas.push_back(sample_noise(model.spec.noise, rng));
    const int out_size = static_cast<int>(shape_numel(infer_shapes(model.spec)));
    std::vector<ObservedValue> obs;
    const int n_obs = std::min(32, out_size);
    for (int k = 0; k < n_obs; ++k) {
      const int index = k * (out_size / n_obs);
      const double value = bounded ? rng.uniform(0.1, 0.9) : rng.normal();
      obs.push_back({index, value});
    }

    std::vector<std::vector<double>> analytic;
    {
      Tape t;
      std::vector<Tape::NodeId> param_nodes;
      for (Parameter& p : model.params) param_nodes.push_back(t.param(p));
      std::vector<Tape::NodeId> losses;
      for (const Tensor& omega : omegas) {
        losses.push_back(
            t.mse_at_indices(forward_on_tape(t, model, t.constant(omega), param_nodes), obs));
      }
      t.backward(t.average(losses));
      if (t.relu_kink_margin() < 1e-4) continue;
      for (const auto id : param_nodes) analytic.push_back(t.grad(id));
    }

    std::vector<Tensor*> ptrs;
    for (Parameter& p : model.params) ptrs.push_back(&p.tensor);
    const auto forward = [&]() {
      Tape t;
      std::vector<Tape::NodeId> param_nodes;
      for (const Parameter& p : model.params) param_nodes.push_back(t.constant(p.tensor));
      std::vector<Tape::NodeId> losses;
      for (const Tensor& omega : omegas) {
        losses.push_back(
            t.mse_at_indices(forward_on_tape(t, model, t.constant(omega), param_nodes), obs));
      }
      return t.value(t.average(losses)).data[0];
    };
    RandomStream coord_rng = RandomStream::derive(seed, 1000 + attempt);
    const auto report = fd_check(ptrs, analytic, forward, 1e-5, max_coords, &coord_rng);
    entry.max_rel_err = report.max_rel_err;
    entry.coords_checked = report.coords_checked;
    return entry;
  }
  throw std::runtime_error("suite_check_network: no instance clear of relu kinks after 64 tries");
}

}  // namespace detail

/// Finite-difference sweep over every differentiable operation plus the
/// composed canonical networks. `network_coords` caps the sampled parameter
/// coordinates per network.
inline SuiteReport run_gradient_suite(std::uint64_t seed, std::size_t network_coords = 1000) {
  using detail::suite_check;
  using detail::suite_weights;
  SuiteReport report;

  {
    RandomStream r = RandomStream::derive(seed, 1);
    auto proj = suite_weights(3, r);
    report.entries.push_back(suite_check(
        "affine",
        {random_normal({4}, 0, 1, r), random_normal({3, 4}, 0, 1, r),
         random_normal({3}, 0, 1, r)},
        [proj](Tape& t, const std::vector<Tape::NodeId>& in) {
          return t.weighted_sum(t.affine(in[0], in[1], in[2]), proj);
        }));
  }
  {
    RandomStream r = RandomStream::derive(seed, 2);
    auto proj = suite_weights(2 * 4, r);
    report.entries.push_back(
        suite_check("conv1d",
                    {random_normal({3, 7}, 0, 1, r), random_normal({2, 3, 3}, 0, 1, r),
                     random_normal({2}, 0, 1, r)},
                    [proj](Tape& t, const std::vector<Tape::NodeId>& in) {
                      return t.weighted_sum(t.conv1d(in[0], in[1], in[2], 2, 1), proj);
                    }));
  }
  {
    RandomStream r = RandomStream::derive(seed, 3);
    auto proj = suite_weights(2 * 12, r);
    report.entries.push_back(suite_check(
        "conv_transpose1d",
        {random_normal({3, 6}, 0, 1, r), random_normal({3, 2, 4}, 0, 1, r),
         random_normal({2}, 0, 1, r)},
        [proj](Tape& t, const std::vector<Tape::NodeId>& in) {
          return t.weighted_sum(t.conv_transpose1d(in[0], in[1], in[2], 2, 1), proj);
        }));
  }
  {
    RandomStream r = RandomStream::derive(seed, 4);
    auto proj = suite_weights(2 * 5 * 5, r);
    report.entries.push_back(
        suite_check("conv2d",
                    {random_normal({1, 5, 5}, 0, 1, r), random_normal({2, 1, 3, 3}, 0, 1, r),
                     random_normal({2}, 0, 1, r)},
                    [proj](Tape& t, const std::vector<Tape::NodeId>& in) {
                      return t.weighted_sum(t.conv2d(in[0], in[1], in[2], 1, 1), proj);
                    }));
  }
  {
    RandomStream r = RandomStream::derive(seed, 5);
    auto proj = suite_weights(2 * 9 * 9, r);
    report.entries.push_back(suite_check(
        "conv_transpose2d",
        {random_normal({1, 5, 5}, 0, 1, r), random_normal({1, 2, 3, 3}, 0, 1, r),
         random_normal({2}, 0, 1, r)},
        [proj](Tape& t, const std::vector<Tape::NodeId>& in) {
          return t.weighted_sum(t.conv_transpose2d(in[0], in[1], in[2], 2, 1), proj);
        }));
  }
  {
    RandomStream r = RandomStream::derive(seed, 6);
    auto proj = suite_weights(1 * 10 * 10, r);
    report.entries.push_back(
        suite_check("upsample2d_nearest", {random_normal({1, 5, 5}, 0, 1, r)},
                    [proj](Tape& t, const std::vector<Tape::NodeId>& in) {
                      return t.weighted_sum(t.upsample2d_nearest(in[0], 2), proj);
                    }));
  }
  for (const Activation kind : {Activation::relu, Activation::tanh, Activation::sigmoid}) {
    RandomStream r = RandomStream::derive(seed, 7 + static_cast<std::uint64_t>(kind));
    Tensor x({6});
    for (double& v : x.data) {
      double z = r.normal();
      while (std::fabs(z) < 1e-2) z = r.normal();
      v = z;
    }
    auto proj = suite_weights(6, r);
    report.entries.push_back(suite_check(
        to_string(kind), {std::move(x)}, [proj, kind](Tape& t, const std::vector<Tape::NodeId>& in) {
          return t.weighted_sum(t.activation(in[0], kind), proj);
        }));
  }
  {
    RandomStream r = RandomStream::derive(seed, 10);
    report.entries.push_back(
        suite_check("reshape_sum", {random_normal({2, 6}, 0, 1, r)},
                    [](Tape& t, const std::vector<Tape::NodeId>& in) {
                      return t.sum(t.reshape(in[0], {3, 4}));
                    }));
  }
  {
    RandomStream r = RandomStream::derive(seed, 11);
    const std::vector<ObservedValue> obs{{0, 0.4}, {3, -0.2}, {9, 1.5}};
    report.entries.push_back(
        suite_check("mse_at_indices", {random_normal({10}, 0, 1, r)},
                    [obs](Tape& t, const std::vector<Tape::NodeId>& in) {
                      return t.mse_at_indices(in[0], obs);
                    }));
  }
  {
    RandomStream r = RandomStream::derive(seed, 12);
    const std::vector<ObservedValue> obs{{1, 0.5}, {2, -0.5}};
    report.entries.push_back(suite_check(
        "average", {random_normal({4}, 0, 1, r), random_normal({4}, 0, 1, r)},
        [obs](Tape& t, const std::vector<Tape::NodeId>& in) {
          return t.average({t.mse_at_indices(in[0], obs), t.mse_at_indices(in[1], obs)});
        }));
  }

  report.entries.push_back(
      detail::suite_check_network(cbc1d_200(), derive_seed(seed, 100), network_coords));
  report.entries.push_back(
      detail::suite_check_network(smooth2d_mnist(), derive_seed(seed, 101), network_coords));
  return report;
}

}  // namespace cbc
