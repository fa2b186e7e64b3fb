#include <cmath>
#include <stdexcept>
#include <vector>

#include "catch_amalgamated.hpp"
#include "cbc/optimizer.hpp"
#include "cbc/random.hpp"
#include "cbc/tape.hpp"
#include "cbc/tensor.hpp"

using cbc::Activation;
using cbc::AdamConfig;
using cbc::ObservedValue;
using cbc::Parameter;
using cbc::RandomStream;
using cbc::Tape;
using cbc::Tensor;

namespace {

std::vector<double> run_values(Tape& t, Tape::NodeId id) { return t.value(id).data; }

}  // namespace

TEST_CASE("affine computes Wx + b") {
  Tape t;
  const auto x = t.constant(Tensor({2}, {2.0, 3.0}));
  const auto w = t.constant(Tensor({2, 2}, {1.0, 1.0, 1.0, -1.0}));
  const auto b = t.constant(Tensor({2}, {0.0, 1.0}));
  const auto y = t.affine(x, w, b);
  REQUIRE(run_values(t, y) == std::vector<double>{5.0, 0.0});
  REQUIRE(t.value(y).shape == std::vector<int>{2});
}

TEST_CASE("affine rejects mismatched shapes") {
  Tape t;
  const auto x = t.constant(Tensor({3}, {1.0, 2.0, 3.0}));
  const auto w = t.constant(Tensor({2, 2}, {1.0, 1.0, 1.0, -1.0}));
  const auto b = t.constant(Tensor({2}, {0.0, 1.0}));
  REQUIRE_THROWS_AS(t.affine(x, w, b), std::invalid_argument);
  const auto x2 = t.constant(Tensor({2}, {1.0, 2.0}));
  const auto b3 = t.constant(Tensor({3}));
  REQUIRE_THROWS_AS(t.affine(x2, w, b3), std::invalid_argument);
}

TEST_CASE("conv1d slides the kernel across the signal") {
  Tape t;
  const auto x = t.constant(Tensor({1, 3}, {1.0, 2.0, 3.0}));
  const auto w = t.constant(Tensor({1, 1, 2}, {1.0, 1.0}));
  const auto b = t.constant(Tensor({1}, {0.0}));
  const auto y = t.conv1d(x, w, b, 1, 0);
  REQUIRE(t.value(y).shape == std::vector<int>{1, 2});
  REQUIRE(run_values(t, y) == std::vector<double>{3.0, 5.0});
}

TEST_CASE("conv1d output length follows stride and padding") {
  Tape t;
  const auto x = t.constant(Tensor({1, 5}, {1.0, 1.0, 1.0, 1.0, 1.0}));
  const auto w = t.constant(Tensor({1, 1, 3}, {1.0, 1.0, 1.0}));
  const auto b = t.constant(Tensor({1}, {0.5}));
  const auto y = t.conv1d(x, w, b, 2, 1);
  // padded length 7, windows at 0,2,4 -> L' = 3; edge windows overlap one zero
  REQUIRE(t.value(y).shape == std::vector<int>{1, 3});
  REQUIRE(run_values(t, y) == std::vector<double>{2.5, 3.5, 2.5});
}

TEST_CASE("conv1d rejects kernels larger than the padded input") {
  Tape t;
  const auto x = t.constant(Tensor({1, 2}, {1.0, 2.0}));
  const auto w = t.constant(Tensor({1, 1, 4}, {1.0, 1.0, 1.0, 1.0}));
  const auto b = t.constant(Tensor({1}, {0.0}));
  REQUIRE_THROWS_AS(t.conv1d(x, w, b, 1, 0), std::invalid_argument);
  REQUIRE(t.value(t.conv1d(x, w, b, 1, 1)).shape == std::vector<int>{1, 1});
}

TEST_CASE("conv_transpose1d with a unit input reproduces the kernel") {
  Tape t;
  const auto x = t.constant(Tensor({1, 1}, {1.0}));
  const auto w = t.constant(Tensor({1, 1, 3}, {1.0, 2.0, 3.0}));
  const auto b = t.constant(Tensor({1}, {0.0}));
  const auto y = t.conv_transpose1d(x, w, b, 1, 0);
  REQUIRE(t.value(y).shape == std::vector<int>{1, 3});
  REQUIRE(run_values(t, y) == std::vector<double>{1.0, 2.0, 3.0});
}

TEST_CASE("conv_transpose1d stride 2 interleaves kernel copies") {
  Tape t;
  const auto x = t.constant(Tensor({1, 2}, {1.0, 1.0}));
  const auto w = t.constant(Tensor({1, 1, 2}, {1.0, 1.0}));
  const auto b = t.constant(Tensor({1}, {0.0}));
  const auto y = t.conv_transpose1d(x, w, b, 2, 0);
  REQUIRE(t.value(y).shape == std::vector<int>{1, 4});
  REQUIRE(run_values(t, y) == std::vector<double>{1.0, 1.0, 1.0, 1.0});
}

TEST_CASE("conv_transpose1d rejects a non-positive output length") {
  Tape t;
  const auto x = t.constant(Tensor({1, 1}, {1.0}));
  const auto w = t.constant(Tensor({1, 1, 2}, {1.0, 1.0}));
  const auto b = t.constant(Tensor({1}, {0.0}));
  REQUIRE_THROWS_AS(t.conv_transpose1d(x, w, b, 1, 1), std::invalid_argument);
}

TEST_CASE("conv_transpose1d is the adjoint of conv1d with a shared kernel") {
  RandomStream r(404);
  for (int trial = 0; trial < 25; ++trial) {
    const int c_in = 1 + static_cast<int>(r.uniform_below(3));
    const int c_out = 1 + static_cast<int>(r.uniform_below(3));
    const int k = 1 + static_cast<int>(r.uniform_below(4));
    const int stride = 1 + static_cast<int>(r.uniform_below(3));
    const int padding = static_cast<int>(r.uniform_below(static_cast<uint64_t>(k)));
    // pick an input length whose padded extent lands exactly on the last window
    const int l_prime = 2 + static_cast<int>(r.uniform_below(4));
    const int len = (l_prime - 1) * stride + k - 2 * padding;
    if (len <= 0) continue;
    const Tensor xv = cbc::random_normal({c_in, len}, 0.0, 1.0, r);
    const Tensor yv = cbc::random_normal({c_out, l_prime}, 0.0, 1.0, r);
    const Tensor wv = cbc::random_normal({c_out, c_in, k}, 0.0, 1.0, r);

    Tape t;
    const auto zero_out = t.constant(Tensor({c_out}));
    const auto zero_in = t.constant(Tensor({c_in}));
    const auto cx = t.conv1d(t.constant(xv), t.constant(wv), zero_out, stride, padding);
    const auto ty = t.conv_transpose1d(t.constant(yv), t.constant(wv), zero_in, stride, padding);
    REQUIRE(t.value(cx).shape == std::vector<int>{c_out, l_prime});
    REQUIRE(t.value(ty).shape == std::vector<int>{c_in, len});

    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < yv.size(); ++i) lhs += t.value(cx).data[i] * yv.data[i];
    for (std::size_t i = 0; i < xv.size(); ++i) rhs += t.value(ty).data[i] * xv.data[i];
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-8));
  }
}

TEST_CASE("conv2d matches a hand-computed window") {
  Tape t;
  const auto x = t.constant(Tensor({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9}));
  const auto w = t.constant(Tensor({1, 1, 2, 2}, {1.0, 0.0, 0.0, 1.0}));
  const auto b = t.constant(Tensor({1}, {1.0}));
  const auto y = t.conv2d(x, w, b, 1, 0);
  REQUIRE(t.value(y).shape == std::vector<int>{1, 2, 2});
  REQUIRE(run_values(t, y) == std::vector<double>{7.0, 9.0, 13.0, 15.0});
}

TEST_CASE("conv2d padding preserves the spatial size with a 3x3 kernel") {
  Tape t;
  const auto x = t.constant(Tensor({2, 4, 4}, std::vector<double>(32, 1.0)));
  const auto w = t.constant(Tensor({3, 2, 3, 3}, std::vector<double>(54, 0.0)));
  const auto b = t.constant(Tensor({3}, {1.0, 2.0, 3.0}));
  const auto y = t.conv2d(x, w, b, 1, 1);
  REQUIRE(t.value(y).shape == std::vector<int>{3, 4, 4});
  REQUIRE(t.value(y).data[0] == 1.0);
  REQUIRE(t.value(y).data[16] == 2.0);
  REQUIRE(t.value(y).data[32] == 3.0);
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d with a shared kernel") {
  RandomStream r(405);
  for (int trial = 0; trial < 25; ++trial) {
    const int c_in = 1 + static_cast<int>(r.uniform_below(2));
    const int c_out = 1 + static_cast<int>(r.uniform_below(2));
    const int k = 1 + static_cast<int>(r.uniform_below(3));
    const int stride = 1 + static_cast<int>(r.uniform_below(2));
    const int padding = static_cast<int>(r.uniform_below(static_cast<uint64_t>(k)));
    const int side_prime = 2 + static_cast<int>(r.uniform_below(3));
    const int side = (side_prime - 1) * stride + k - 2 * padding;
    if (side <= 0) continue;
    const Tensor xv = cbc::random_normal({c_in, side, side}, 0.0, 1.0, r);
    const Tensor yv = cbc::random_normal({c_out, side_prime, side_prime}, 0.0, 1.0, r);
    const Tensor wv = cbc::random_normal({c_out, c_in, k, k}, 0.0, 1.0, r);

    Tape t;
    const auto cx = t.conv2d(t.constant(xv), t.constant(wv), t.constant(Tensor({c_out})),
                             stride, padding);
    const auto ty = t.conv_transpose2d(t.constant(yv), t.constant(wv),
                                       t.constant(Tensor({c_in})), stride, padding);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < yv.size(); ++i) lhs += t.value(cx).data[i] * yv.data[i];
    for (std::size_t i = 0; i < xv.size(); ++i) rhs += t.value(ty).data[i] * xv.data[i];
    REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-8));
  }
}

TEST_CASE("upsample2d_nearest replicates pixels into blocks") {
  Tape t;
  const auto x = t.constant(Tensor({1, 2, 2}, {1.0, 2.0, 3.0, 4.0}));
  const auto y = t.upsample2d_nearest(x, 2);
  REQUIRE(t.value(y).shape == std::vector<int>{1, 4, 4});
  REQUIRE(run_values(t, y) == std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2,
                                                  3, 3, 4, 4, 3, 3, 4, 4});
  REQUIRE_THROWS_AS(t.upsample2d_nearest(x, 0), std::invalid_argument);
}

TEST_CASE("relu zeroes negatives and keeps positives") {
  Tape t;
  const auto x = t.constant(Tensor({3}, {-1.0, 0.0, 2.0}));
  const auto y = t.activation(x, Activation::relu);
  REQUIRE(run_values(t, y) == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("sigmoid is centered and stays strictly inside the unit interval") {
  Tape t;
  const auto x = t.constant(Tensor({3}, {0.0, 1000.0, -1000.0}));
  const auto y = t.activation(x, Activation::sigmoid);
  const auto v = run_values(t, y);
  REQUIRE(v[0] == 0.5);
  REQUIRE(v[1] < 1.0);
  REQUIRE(v[1] > 0.99);
  REQUIRE(v[2] > 0.0);
  REQUIRE(v[2] < 0.01);
}

TEST_CASE("tanh matches the standard library") {
  Tape t;
  const auto x = t.constant(Tensor({3}, {-0.7, 0.0, 1.3}));
  const auto y = t.activation(x, Activation::tanh);
  const auto v = run_values(t, y);
  REQUIRE(v[0] == Catch::Approx(std::tanh(-0.7)).margin(1e-15));
  REQUIRE(v[1] == 0.0);
  REQUIRE(v[2] == Catch::Approx(std::tanh(1.3)).margin(1e-15));
}

TEST_CASE("reshape keeps data and validates element count") {
  Tape t;
  const auto x = t.constant(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  const auto y = t.reshape(x, {3, 2});
  REQUIRE(t.value(y).shape == std::vector<int>{3, 2});
  REQUIRE(run_values(t, y) == run_values(t, x));
  REQUIRE_THROWS_AS(t.reshape(x, {4, 2}), std::invalid_argument);
}

TEST_CASE("mse_at_indices sums squared errors at observed sites") {
  Tape t;
  const auto x = t.constant(Tensor({3}, {0.0, 0.0, 0.0}));
  const std::vector<ObservedValue> obs{{0, 1.0}, {2, 2.0}};
  const auto y = t.mse_at_indices(x, obs);
  REQUIRE(t.value(y).size() == 1);
  REQUIRE(t.value(y).data[0] == 5.0);
}

TEST_CASE("mse_at_indices accepts an empty observation set") {
  Tape t;
  const auto x = t.constant(Tensor({3}, {1.0, 2.0, 3.0}));
  const auto y = t.mse_at_indices(x, std::vector<ObservedValue>{});
  REQUIRE(t.value(y).data[0] == 0.0);
}

TEST_CASE("mse_at_indices validates indices") {
  Tape t;
  const auto x = t.constant(Tensor({3}, {0.0, 0.0, 0.0}));
  REQUIRE_THROWS_AS(t.mse_at_indices(x, std::vector<ObservedValue>{{3, 1.0}}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(t.mse_at_indices(x, std::vector<ObservedValue>{{-1, 1.0}}),
                    std::invalid_argument);
}

TEST_CASE("average combines scalar nodes") {
  Tape t;
  const auto a = t.constant(Tensor::scalar(1.0));
  const auto b = t.constant(Tensor::scalar(3.0));
  REQUIRE(t.value(t.average({a, b})).data[0] == 2.0);
  REQUIRE_THROWS_AS(t.average({}), std::invalid_argument);
  const auto v = t.constant(Tensor({2}, {1.0, 2.0}));
  REQUIRE_THROWS_AS(t.average({a, v}), std::invalid_argument);
}

TEST_CASE("adam first step moves a unit-gradient scalar by about lr") {
  Parameter p(Tensor::scalar(1.0));
  p.tensor.grad = {1.0};
  AdamConfig cfg;
  cbc::adam_step({&p}, cfg);
  const double moved = 1.0 - p.tensor.data[0];
  REQUIRE(moved == Catch::Approx(cfg.lr).epsilon(1e-6));
  REQUIRE(p.tensor.grad.empty());
  REQUIRE(p.step_count == 1);
}

TEST_CASE("adam matches a reference implementation of the update recurrence") {
  Parameter p(Tensor({2}, {0.5, -1.5}));
  AdamConfig cfg;
  cfg.lr = 0.01;
  double m[2] = {0, 0}, v[2] = {0, 0};
  double ref[2] = {0.5, -1.5};
  RandomStream r(88);
  for (int step = 1; step <= 50; ++step) {
    double g[2] = {r.normal(), r.normal()};
    p.tensor.grad = {g[0], g[1]};
    cbc::adam_step({&p}, cfg);
    for (int i = 0; i < 2; ++i) {
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / (1 - std::pow(cfg.beta1, step));
      const double vhat = v[i] / (1 - std::pow(cfg.beta2, step));
      ref[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      REQUIRE(p.tensor.data[static_cast<std::size_t>(i)] == Catch::Approx(ref[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("adam refuses to step with a missing gradient") {
  Parameter a(Tensor::scalar(1.0));
  Parameter b(Tensor::scalar(2.0));
  a.tensor.grad = {1.0};
  const double a0 = a.tensor.data[0];
  REQUIRE_THROWS_AS(cbc::adam_step({&a, &b}, AdamConfig{}), std::logic_error);
  // nothing was mutated before the failure was detected
  REQUIRE(a.tensor.data[0] == a0);
  REQUIRE(a.step_count == 0);
}
