#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "catch_amalgamated.hpp"
#include "cbc/random.hpp"
#include "cbc/tensor.hpp"

using cbc::RandomStream;
using cbc::Tensor;

TEST_CASE("same seed reproduces the exact stream") {
  RandomStream a(42), b(42);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());
  RandomStream c(42), d(42);
  for (int i = 0; i < 1000; ++i) REQUIRE(c.normal() == d.normal());
}

TEST_CASE("different seeds give different streams") {
  RandomStream a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) {
    if (a.next_u64() == b.next_u64()) ++same;
  }
  REQUIRE(same == 0);
}

TEST_CASE("derive produces independent substreams") {
  RandomStream a = RandomStream::derive(7, 0);
  RandomStream b = RandomStream::derive(7, 1);
  RandomStream a2 = RandomStream::derive(7, 0);
  int same = 0;
  for (int i = 0; i < 64; ++i) {
    const uint64_t va = a.next_u64();
    if (va == b.next_u64()) ++same;
    REQUIRE(va == a2.next_u64());
  }
  REQUIRE(same == 0);
}

TEST_CASE("uniform lies in the half-open unit interval") {
  RandomStream r(3);
  double lo = 1.0, hi = 0.0, acc = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
    acc += u;
  }
  REQUIRE(acc / n == Catch::Approx(0.5).margin(0.01));
  REQUIRE(lo < 0.01);
  REQUIRE(hi > 0.99);
}

TEST_CASE("uniform with bounds rescales correctly") {
  RandomStream r(9);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform(-4.0, 4.0);
    REQUIRE(u >= -4.0);
    REQUIRE(u < 4.0);
  }
}

TEST_CASE("uniform_below covers the range without bias") {
  RandomStream r(11);
  std::vector<int> counts(5, 0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(r.uniform_below(5))];
  for (int c : counts) {
    REQUIRE(c > n / 5 - 800);
    REQUIRE(c < n / 5 + 800);
  }
  REQUIRE_THROWS_AS(r.uniform_below(0), std::invalid_argument);
}

TEST_CASE("normal matches standard moments") {
  RandomStream r(2024);
  const int n = 200000;
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    mean += z;
    m2 += z * z;
  }
  mean /= n;
  const double var = m2 / n - mean * mean;
  REQUIRE(mean == Catch::Approx(0.0).margin(0.01));
  REQUIRE(var == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("normal accepts location and scale") {
  RandomStream r(5);
  const int n = 100000;
  double mean = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal(3.0, 0.5);
    mean += z;
    m2 += z * z;
  }
  mean /= n;
  const double var = m2 / n - mean * mean;
  REQUIRE(mean == Catch::Approx(3.0).margin(0.02));
  REQUIRE(var == Catch::Approx(0.25).margin(0.02));
  REQUIRE_THROWS_AS(r.normal(0.0, -1.0), std::invalid_argument);
}

TEST_CASE("random_normal tensor has unit moments at size 10000") {
  RandomStream r(123);
  const Tensor t = cbc::random_normal({10000}, 0.0, 1.0, r);
  REQUIRE(t.shape == std::vector<int>{10000});
  double mean = 0.0, m2 = 0.0;
  for (double v : t.data) {
    mean += v;
    m2 += v * v;
  }
  mean /= static_cast<double>(t.size());
  const double var = m2 / static_cast<double>(t.size()) - mean * mean;
  REQUIRE(std::fabs(mean - 0.0) < 0.05);
  REQUIRE(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("random_normal is deterministic per seed and rejects bad scale") {
  RandomStream a(77), b(77);
  const Tensor ta = cbc::random_normal({3, 4}, 1.0, 2.0, a);
  const Tensor tb = cbc::random_normal({3, 4}, 1.0, 2.0, b);
  REQUIRE(ta.data == tb.data);
  RandomStream c(78);
  const Tensor tc = cbc::random_normal({3, 4}, 1.0, 2.0, c);
  REQUIRE(ta.data != tc.data);
  RandomStream d(1);
  REQUIRE_THROWS_AS(cbc::random_normal({2}, 0.0, -0.1, d), std::invalid_argument);
}
