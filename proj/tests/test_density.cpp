#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "catch_amalgamated.hpp"
#include "cbc/converter.hpp"
#include "cbc/density.hpp"
#include "cbc/process.hpp"
#include "cbc/random.hpp"

using cbc::Activation;
using cbc::ConverterSpec;
using cbc::DensityEstimate;
using cbc::EnsembleSamples;
using cbc::Grid1D;
using cbc::LayerSpec;
using cbc::Model;
using cbc::NllReport;
using cbc::ObservationSet;
using cbc::OutputActivation;
using cbc::RandomStream;
using cbc::Trajectory;

namespace {

ConverterSpec tiny_sigmoid_spec() {
  ConverterSpec s;
  s.name = "tiny_sigmoid";
  s.noise.shape = {3};
  s.layers = {
      LayerSpec::affine(8),
      LayerSpec::activation(Activation::relu),
      LayerSpec::affine(6),
  };
  s.output_activation = OutputActivation::sigmoid;
  return s;
}

EnsembleSamples single_column(std::vector<double> samples) {
  EnsembleSamples e;
  e.n_samples = samples.size();
  e.trajectory_size = 1;
  e.values = std::move(samples);
  return e;
}

Trajectory scalar_truth(double value) {
  return Trajectory(Grid1D{1, 0.0, 1.0}, {value});
}

}  // namespace

TEST_CASE("degenerate ensemble at the bandwidth floor has the analytic NLL") {
  const double floor = cbc::kde_bandwidth_floor;
  const auto ensemble = single_column(std::vector<double>(16, 0.7));
  const double expected = std::log(std::sqrt(2.0 * std::numbers::pi) * floor);

  const NllReport fixed = cbc::kde_nll(ensemble, scalar_truth(0.7), {0}, floor);
  REQUIRE(fixed.per_target_nll.size() == 1);
  REQUIRE(fixed.mean_nll == Catch::Approx(expected).margin(1e-12));

  // Zero sample spread drives the Silverman rule to the floor as well.
  const NllReport silverman = cbc::kde_nll(ensemble, scalar_truth(0.7), {0});
  REQUIRE(silverman.mean_nll == Catch::Approx(expected).margin(1e-12));
}

TEST_CASE("KDE NLL of a standard normal ensemble matches the analytic density") {
  RandomStream rng(901);
  std::vector<double> samples(10000);
  for (double& v : samples) v = rng.normal();
  const auto ensemble = single_column(samples);

  // -log phi(0) = 0.5 * log(2 pi)
  const NllReport at_zero = cbc::kde_nll(ensemble, scalar_truth(0.0), {0});
  REQUIRE(at_zero.mean_nll == Catch::Approx(0.9189385).margin(0.05));

  // Mean NLL over truths drawn from the same normal approaches the
  // differential entropy 0.5 * log(2 pi e).
  const auto density = cbc::make_density(samples);
  RandomStream truth_rng(902);
  double total = 0.0;
  const int n_truths = 1000;
  for (int i = 0; i < n_truths; ++i) total += -density.log_density(truth_rng.normal());
  REQUIRE(total / n_truths == Catch::Approx(1.4189385).margin(0.05));
}

TEST_CASE("KDE density is non-negative and integrates to one") {
  RandomStream rng(903);
  std::vector<double> samples(64);
  for (double& v : samples) v = 2.0 * rng.normal() + 0.5;
  const auto density = cbc::make_density(samples);

  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= static_cast<double>(samples.size());
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double sigma = std::sqrt(ss / static_cast<double>(samples.size() - 1));

  const double lo = mean - 10.0 * sigma;
  const double hi = mean + 10.0 * sigma;
  const int n_points = 20001;
  const double dx = (hi - lo) / (n_points - 1);
  double integral = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const double x = lo + i * dx;
    const double p = density.density(x);
    REQUIRE(p >= 0.0);
    integral += (i == 0 || i == n_points - 1) ? 0.5 * p : p;
  }
  integral *= dx;
  REQUIRE(integral == Catch::Approx(1.0).margin(1e-3));
}

TEST_CASE("NLL is invariant under permutation of ensemble rows") {
  RandomStream rng(904);
  std::vector<double> samples(128);
  for (double& v : samples) v = rng.normal();

  const NllReport base = cbc::kde_nll(single_column(samples), scalar_truth(0.3), {0});

  std::vector<double> shuffled = samples;
  for (std::size_t i = shuffled.size(); i > 1; --i) {
    std::swap(shuffled[i - 1], shuffled[rng.uniform_below(i)]);
  }
  REQUIRE_FALSE(std::equal(samples.begin(), samples.end(), shuffled.begin()));
  const NllReport permuted = cbc::kde_nll(single_column(shuffled), scalar_truth(0.3), {0});

  REQUIRE(permuted.mean_nll == Catch::Approx(base.mean_nll).margin(1e-12));
}

TEST_CASE("adding the truth to the ensemble never raises its fixed-bandwidth NLL") {
  RandomStream rng(905);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> samples(32);
    for (double& v : samples) v = 3.0 * rng.normal();
    const double truth = 3.0 * rng.normal();
    const double h = 0.05 + rng.uniform();

    const NllReport before = cbc::kde_nll(single_column(samples), scalar_truth(truth), {0}, h);
    samples.push_back(truth);
    const NllReport after = cbc::kde_nll(single_column(samples), scalar_truth(truth), {0}, h);

    REQUIRE(after.mean_nll <= before.mean_nll + 1e-12);
  }
}

TEST_CASE("kde_nll validates its inputs") {
  const auto ensemble = single_column({0.0, 1.0, 2.0});
  REQUIRE_THROWS_AS(cbc::kde_nll(single_column({0.5}), scalar_truth(0.0), {0}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cbc::kde_nll(ensemble, scalar_truth(0.0), {}), std::invalid_argument);
  REQUIRE_THROWS_AS(cbc::kde_nll(ensemble, scalar_truth(0.0), {1}), std::invalid_argument);
  REQUIRE_THROWS_AS(cbc::kde_nll(ensemble, scalar_truth(0.0), {-1}), std::invalid_argument);
  REQUIRE_THROWS_AS(cbc::kde_nll(ensemble, scalar_truth(0.0), {0}, 0.0), std::invalid_argument);
  const Trajectory wide(Grid1D{2, 0.0, 1.0}, {0.0, 0.0});
  REQUIRE_THROWS_AS(cbc::kde_nll(ensemble, wide, {0}), std::invalid_argument);
  REQUIRE_THROWS_AS(cbc::make_density({1.0}), std::invalid_argument);
}

TEST_CASE("per-target NLLs aggregate into mean and spread") {
  EnsembleSamples e;
  e.n_samples = 4;
  e.trajectory_size = 2;
  // Column 0 concentrates near 0, column 1 near 5.
  e.values = {0.0, 5.0, 0.1, 5.1, -0.1, 4.9, 0.05, 5.05};
  const Trajectory truth(Grid1D{2, 0.0, 1.0}, {0.0, 0.0});

  const NllReport report = cbc::kde_nll(e, truth, {0, 1});
  REQUIRE(report.per_target_nll.size() == 2);
  // Truth 0 sits on column 0's mass but far outside column 1's.
  REQUIRE(report.per_target_nll[0] < report.per_target_nll[1]);
  REQUIRE(report.mean_nll ==
          Catch::Approx(0.5 * (report.per_target_nll[0] + report.per_target_nll[1])));
  const double expected_sd =
      std::sqrt(0.5 * (std::pow(report.per_target_nll[0] - report.mean_nll, 2) +
                       std::pow(report.per_target_nll[1] - report.mean_nll, 2)) *
                2.0);
  REQUIRE(report.stddev_nll == Catch::Approx(expected_sd));
}

TEST_CASE("sample_ensemble is deterministic and prefix-stable") {
  const Model model = cbc::build_converter(tiny_sigmoid_spec(), 77);

  const auto a = cbc::sample_ensemble(model, 8, 123);
  const auto b = cbc::sample_ensemble(model, 8, 123);
  REQUIRE(a.values == b.values);
  REQUIRE(a.n_samples == 8);
  REQUIRE(a.trajectory_size == 6);

  const auto c = cbc::sample_ensemble(model, 8, 124);
  REQUIRE(a.values != c.values);

  // Sample m depends only on (seed, m), so shorter ensembles are prefixes.
  const auto prefix = cbc::sample_ensemble(model, 4, 123);
  REQUIRE(std::equal(prefix.values.begin(), prefix.values.end(), a.values.begin()));

  const auto one = cbc::sample_ensemble(model, 1, 123);
  REQUIRE(one.n_samples == 1);
  REQUIRE_THROWS_AS(cbc::sample_ensemble(model, 0, 123), std::invalid_argument);
}

TEST_CASE("zeroed sigmoid model yields constant 0.5 ensembles") {
  Model model = cbc::build_converter(tiny_sigmoid_spec(), 5);
  for (auto& p : model.params) {
    std::fill(p.tensor.data.begin(), p.tensor.data.end(), 0.0);
  }
  const auto ensemble = cbc::sample_ensemble(model, 8, 99);
  for (double v : ensemble.values) REQUIRE(v == 0.5);
}

TEST_CASE("summarize reports columnwise statistics") {
  SECTION("constant ensemble") {
    EnsembleSamples e;
    e.n_samples = 5;
    e.trajectory_size = 2;
    e.values.assign(10, 1.25);
    const auto s = cbc::summarize(e);
    for (std::size_t j = 0; j < 2; ++j) {
      REQUIRE(s.mean[j] == 1.25);
      REQUIRE(s.stddev[j] == 0.0);
      REQUIRE(s.q025[j] == 1.25);
      REQUIRE(s.median[j] == 1.25);
      REQUIRE(s.q975[j] == 1.25);
    }
  }

  SECTION("balanced binary column") {
    EnsembleSamples e;
    e.n_samples = 8;
    e.trajectory_size = 1;
    e.values = {0, 1, 0, 1, 0, 1, 0, 1};
    const auto s = cbc::summarize(e);
    REQUIRE(s.mean[0] == 0.5);
    REQUIRE((s.median[0] == 0.0 || s.median[0] == 1.0));
  }

  SECTION("normal quantiles") {
    RandomStream rng(906);
    EnsembleSamples e;
    e.n_samples = 10000;
    e.trajectory_size = 1;
    e.values.resize(e.n_samples);
    for (double& v : e.values) v = rng.normal();
    const auto s = cbc::summarize(e);
    REQUIRE(s.q025[0] == Catch::Approx(-1.96).margin(0.08));
    REQUIRE(s.q975[0] == Catch::Approx(1.96).margin(0.08));
    REQUIRE(s.median[0] == Catch::Approx(0.0).margin(0.05));
  }

  SECTION("rejects a single sample") {
    EnsembleSamples e;
    e.n_samples = 1;
    e.trajectory_size = 1;
    e.values = {0.0};
    REQUIRE_THROWS_AS(cbc::summarize(e), std::invalid_argument);
  }
}

TEST_CASE("training shrinks ensemble spread near the observations") {
  Model model = cbc::build_converter(cbc::cbc1d_200(), 31);

  Trajectory target(Grid1D{200, 0.0, 6.0 * std::numbers::pi}, std::vector<double>(200, 0.0));
  for (int i = 0; i < 200; ++i) target.values[static_cast<std::size_t>(i)] = std::sin(0.12 * i);

  // Observations cluster on the left half; the far right stays unconstrained.
  const ObservationSet obs = cbc::select_observations(
      target, std::vector<int>{10, 20, 30, 40, 50, 60, 70, 80});
  cbc::TrainConfig cfg;
  cfg.max_steps = 600;
  cfg.seed = 7;
  cbc::train(model, obs, cfg);

  const auto summary = cbc::summarize(cbc::sample_ensemble(model, 64, 15));
  double observed_sd = 0.0;
  for (int i : obs.observed_indices()) observed_sd += summary.stddev[static_cast<std::size_t>(i)];
  observed_sd /= static_cast<double>(obs.entries.size());

  double far_sd = 0.0;
  int far_count = 0;
  for (int i = 160; i < 200; ++i) {
    far_sd += summary.stddev[static_cast<std::size_t>(i)];
    ++far_count;
  }
  far_sd /= far_count;

  REQUIRE(observed_sd < far_sd);
}
