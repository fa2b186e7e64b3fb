#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>
#include <vector>

#include "catch_amalgamated.hpp"
#include "cbc/linalg.hpp"
#include "cbc/process.hpp"
#include "cbc/random.hpp"

using cbc::Grid1D;
using cbc::Grid2D;
using cbc::GpSpec;
using cbc::MarkovBinarySpec;
using cbc::ObservationSet;
using cbc::RandomStream;
using cbc::Trajectory;
using cbc::UniformSpec;

TEST_CASE("cholesky factorizes and solves a known SPD system") {
  // A = [[4,2],[2,3]] -> L = [[2,0],[1,sqrt(2)]]
  const std::vector<double> a{4.0, 2.0, 2.0, 3.0};
  const auto f = cbc::cholesky_with_jitter(a, 2);
  REQUIRE(f.jitter == 1e-8);
  REQUIRE(f.l[0] == Catch::Approx(2.0).epsilon(1e-8));
  REQUIRE(f.l[2] == Catch::Approx(1.0).epsilon(1e-8));
  REQUIRE(f.l[3] == Catch::Approx(std::sqrt(2.0)).epsilon(1e-7));
  // solve A x = [1, 2] -> x = (1/8)·[-1, 6] for the un-jittered system
  std::vector<double> b{1.0, 2.0};
  f.solve_lower(b);
  f.solve_upper(b);
  REQUIRE(b[0] == Catch::Approx(-1.0 / 8.0).margin(1e-6));
  REQUIRE(b[1] == Catch::Approx(6.0 / 8.0).margin(1e-6));
}

TEST_CASE("cholesky escalates jitter and eventually gives up") {
  // eigenvalues 3 and -1: no small jitter can rescue this matrix
  const std::vector<double> indefinite{1.0, 2.0, 2.0, 1.0};
  REQUIRE_THROWS_AS(cbc::cholesky_with_jitter(indefinite, 2), std::runtime_error);
  // eigenvalues 2+1e-6 and -1e-6 need jitter above the starting 1e-8
  const std::vector<double> nearly{1.0, 1.0 + 1e-6, 1.0 + 1e-6, 1.0};
  const auto f = cbc::cholesky_with_jitter(nearly, 2);
  REQUIRE(f.jitter > 1e-8);
  REQUIRE(f.jitter <= 1e-4);
  REQUIRE_THROWS_AS(cbc::cholesky_with_jitter({1.0}, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(cbc::cholesky_with_jitter({1.0, 2.0}, 2), std::invalid_argument);
}

TEST_CASE("grid positions span zero to six pi inclusive") {
  const Grid1D g{200};
  REQUIRE(g.position(0) == 0.0);
  REQUIRE(g.position(199) == Catch::Approx(6.0 * std::numbers::pi).epsilon(1e-12));
  const Grid1D single{1};
  REQUIRE(single.position(0) == 0.0);
}

TEST_CASE("trajectory construction validates the value count") {
  REQUIRE_THROWS_AS(Trajectory(Grid1D{3}, {1.0, 2.0}), std::invalid_argument);
  REQUIRE_THROWS_AS(Trajectory(Grid2D{3, 2, 2}, std::vector<double>(11, 0.0)),
                    std::invalid_argument);
  const Trajectory ok(Grid2D{3, 2, 2}, std::vector<double>(12, 0.0));
  REQUIRE(cbc::domain_size(ok.domain) == 12);
  REQUIRE(cbc::site_count(ok.domain) == 4);
}

TEST_CASE("gp sampler is deterministic and validates its spec") {
  GpSpec spec;
  spec.n = 50;
  RandomStream a(5), b(5);
  const Trajectory ta = cbc::sample_gp(spec, a);
  const Trajectory tb = cbc::sample_gp(spec, b);
  REQUIRE(ta.values == tb.values);
  GpSpec bad = spec;
  bad.sigma = 0.0;
  RandomStream r(1);
  REQUIRE_THROWS_AS(cbc::sample_gp(bad, r), std::invalid_argument);
  bad = spec;
  bad.ell = -1.0;
  REQUIRE_THROWS_AS(cbc::sample_gp(bad, r), std::invalid_argument);
}

TEST_CASE("gp sampler with one point draws from the marginal") {
  GpSpec spec;
  spec.sigma = 1.5;
  spec.n = 1;
  RandomStream r(31);
  double m2 = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const double v = cbc::sample_gp(spec, r).values[0];
    m2 += v * v;
  }
  const double var = m2 / draws;
  REQUIRE(var == Catch::Approx(spec.sigma * spec.sigma).epsilon(0.05));
}

TEST_CASE("gp sampler with a huge length scale is nearly constant") {
  GpSpec spec;
  spec.ell = 1e6;
  spec.n = 100;
  RandomStream r(7);
  for (int trial = 0; trial < 5; ++trial) {
    const Trajectory t = cbc::sample_gp(spec, r);
    const auto [lo, hi] = std::minmax_element(t.values.begin(), t.values.end());
    REQUIRE(*hi - *lo < 1e-2);
  }
}

TEST_CASE("gp sampler covariance decays like the kernel") {
  GpSpec spec;
  spec.n = 200;
  RandomStream r(99);
  const Grid1D grid{spec.n};
  const int draws = 5000;
  const std::vector<int> lags{0, 1, 5, 20};
  std::vector<double> acc(lags.size(), 0.0);
  std::vector<long> cnt(lags.size(), 0);
  for (int d = 0; d < draws; ++d) {
    const Trajectory t = cbc::sample_gp(spec, r);
    for (std::size_t li = 0; li < lags.size(); ++li) {
      const int lag = lags[li];
      for (int i = 0; i + lag < spec.n; i += 7) {  // thin the pairs, keep the test fast
        acc[li] += t.values[static_cast<std::size_t>(i)] *
                   t.values[static_cast<std::size_t>(i + lag)];
        ++cnt[li];
      }
    }
  }
  for (std::size_t li = 0; li < lags.size(); ++li) {
    const double d = grid.position(lags[li]) - grid.position(0);
    const double expected = std::exp(-0.5 * d * d);
    REQUIRE(acc[li] / static_cast<double>(cnt[li]) ==
            Catch::Approx(expected).margin(0.05));
  }
}

TEST_CASE("uniform sampler stays in range with the right moments") {
  UniformSpec spec;
  spec.n = 10000;
  RandomStream r(14);
  const Trajectory t = cbc::sample_uniform(spec, r);
  double mean = 0.0, m2 = 0.0, lag1 = 0.0;
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    const double v = t.values[i];
    REQUIRE(v >= -4.0);
    REQUIRE(v < 4.0);
    mean += v;
    m2 += v * v;
    if (i + 1 < t.values.size()) lag1 += v * t.values[i + 1];
  }
  mean /= spec.n;
  const double var = m2 / spec.n - mean * mean;
  REQUIRE(std::fabs(mean) < 0.1);
  REQUIRE(var == Catch::Approx(16.0 / 3.0).margin(0.3));
  const double corr = (lag1 / (spec.n - 1) - mean * mean) / var;
  REQUIRE(std::fabs(corr) < 0.05);
  UniformSpec bad;
  bad.low = 1.0;
  bad.high = 1.0;
  REQUIRE_THROWS_AS(cbc::sample_uniform(bad, r), std::invalid_argument);
}

TEST_CASE("markov sampler respects absorbing dynamics at p_stay one") {
  MarkovBinarySpec spec;
  spec.p_stay = 1.0;
  spec.initial = {1.0, 0.0};
  spec.n = 100;
  RandomStream r(3);
  const Trajectory t = cbc::sample_markov_chain(spec, r);
  for (double v : t.values) REQUIRE(v == 0.0);
}

TEST_CASE("markov sampler stay frequency matches p_stay") {
  MarkovBinarySpec spec;
  spec.p_stay = 0.9;
  spec.n = 200;
  RandomStream r(21);
  long stays = 0, transitions = 0;
  for (int chain = 0; chain < 10000; ++chain) {
    const Trajectory t = cbc::sample_markov_chain(spec, r);
    for (int i = 1; i < spec.n; ++i) {
      stays += t.values[static_cast<std::size_t>(i)] ==
               t.values[static_cast<std::size_t>(i - 1)];
      ++transitions;
    }
  }
  REQUIRE(static_cast<double>(stays) / static_cast<double>(transitions) ==
          Catch::Approx(0.9).margin(0.01));
}

TEST_CASE("markov sampler at p_stay half is memoryless") {
  MarkovBinarySpec spec;
  spec.p_stay = 0.5;
  spec.n = 20000;
  RandomStream r(8);
  const Trajectory t = cbc::sample_markov_chain(spec, r);
  double mean = 0.0;
  for (double v : t.values) mean += v;
  mean /= spec.n;
  double cov = 0.0, var = 0.0;
  for (std::size_t i = 0; i + 1 < t.values.size(); ++i) {
    cov += (t.values[i] - mean) * (t.values[i + 1] - mean);
    var += (t.values[i] - mean) * (t.values[i] - mean);
  }
  REQUIRE(std::fabs(cov / var) < 0.05);
}

TEST_CASE("markov spec validation") {
  MarkovBinarySpec bad;
  bad.p_stay = 0.0;
  RandomStream r(1);
  REQUIRE_THROWS_AS(cbc::sample_markov_chain(bad, r), std::invalid_argument);
  bad.p_stay = 1.1;
  REQUIRE_THROWS_AS(cbc::sample_markov_chain(bad, r), std::invalid_argument);
  bad.p_stay = 0.5;
  bad.initial = {0.7, 0.2};
  REQUIRE_THROWS_AS(cbc::sample_markov_chain(bad, r), std::invalid_argument);
}

TEST_CASE("named observation positions partition the domain") {
  GpSpec spec;
  RandomStream r(17);
  const Trajectory t = cbc::sample_gp(spec, r);
  const ObservationSet s = cbc::select_observations(t, std::vector<int>{20, 30, 50});
  REQUIRE(s.entries.size() == 3);
  REQUIRE(s.target_indices().size() == 197);
  REQUIRE(s.entries[0].index == 20);
  REQUIRE(s.entries[0].value == t.values[20]);
  REQUIRE_THROWS_AS(cbc::select_observations(t, std::vector<int>{20, 20}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cbc::select_observations(t, std::vector<int>{200}),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(cbc::select_observations(t, std::vector<int>{-1}),
                    std::invalid_argument);
}

TEST_CASE("counted observation selection is a uniform partition") {
  UniformSpec spec;
  spec.n = 57;
  RandomStream gen(4);
  const Trajectory t = cbc::sample_uniform(spec, gen);
  for (int count : {0, 1, 29, 57}) {
    RandomStream r(100 + static_cast<std::uint64_t>(count));
    const ObservationSet s = cbc::select_observations(t, count, r);
    REQUIRE(static_cast<int>(s.entries.size()) == count);
    const auto targets = s.target_indices();
    REQUIRE(static_cast<int>(targets.size()) == spec.n - count);
    std::set<int> all;
    for (const auto& e : s.entries) all.insert(e.index);
    for (int i : targets) REQUIRE(all.insert(i).second);
    REQUIRE(static_cast<int>(all.size()) == spec.n);
  }
  RandomStream r(5);
  REQUIRE_THROWS_AS(cbc::select_observations(t, 58, r), std::invalid_argument);
  REQUIRE_THROWS_AS(cbc::select_observations(t, -1, r), std::invalid_argument);
}

TEST_CASE("counted observation selection is seed-deterministic") {
  UniformSpec spec;
  RandomStream gen(4);
  const Trajectory t = cbc::sample_uniform(spec, gen);
  RandomStream a(9), b(9), c(10);
  const auto sa = cbc::select_observations(t, 50, a);
  const auto sb = cbc::select_observations(t, 50, b);
  const auto sc = cbc::select_observations(t, 50, c);
  REQUIRE(sa.observed_indices() == sb.observed_indices());
  REQUIRE(sa.observed_indices() != sc.observed_indices());
}

TEST_CASE("observing an image site covers every channel") {
  const Trajectory img(Grid2D{3, 4, 4}, [] {
    std::vector<double> v(48);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    return v;
  }());
  const ObservationSet s = cbc::select_observations(img, std::vector<int>{0, 5});
  REQUIRE(s.entries.size() == 6);
  std::vector<int> idx = s.observed_indices();
  REQUIRE(idx == std::vector<int>{0, 5, 16, 21, 32, 37});
  for (const auto& e : s.entries) REQUIRE(e.value == static_cast<double>(e.index));
  RandomStream r(2);
  const ObservationSet full = cbc::select_observations(img, 16, r);
  REQUIRE(full.entries.size() == 48);
  REQUIRE(full.target_indices().empty());
}
