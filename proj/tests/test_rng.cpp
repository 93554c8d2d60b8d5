#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "rldyn/rng.hpp"

using namespace rldyn;

TEST_CASE("identical seeds produce identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derived streams are independent of sibling paths") {
  Rng a = derive_rng(7, {stream::rollout, 0, 1});
  Rng b = derive_rng(7, {stream::rollout, 0, 2});
  Rng a2 = derive_rng(7, {stream::rollout, 0, 1});
  CHECK(a.next_u64() != b.next_u64());
  Rng a3 = derive_rng(7, {stream::rollout, 0, 1});
  CHECK(a3.next_u64() == a2.next_u64());
}

TEST_CASE("uniform01 stays in [0,1) and looks uniform") {
  Rng rng(3);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  // mean of n uniforms: 0.5 +- ~4 sigma
  CHECK(std::abs(sum / n - 0.5) < 4.0 / std::sqrt(12.0 * n));
}

TEST_CASE("uniform_int covers its range") {
  Rng rng(11);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    const int v = rng.uniform_int(7);
    REQUIRE(v >= 0);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
  CHECK_THROWS_AS(rng.uniform_int(0), std::invalid_argument);
}

TEST_CASE("normal moments") {
  Rng rng(5);
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    m1 += x;
    m2 += x * x;
  }
  m1 /= n;
  m2 /= n;
  CHECK(std::abs(m1) < 0.02);
  CHECK(std::abs(m2 - 1.0) < 0.03);
}

TEST_CASE("categorical follows the probability vector") {
  Rng rng(9);
  const std::vector<double> probs = {0.25, 0.75};
  int ones = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ones += rng.categorical(probs);
  // binomial 3-sigma interval around 0.75
  const double sd = std::sqrt(0.75 * 0.25 / n);
  CHECK(std::abs(static_cast<double>(ones) / n - 0.75) < 3.0 * sd);
}

TEST_CASE("weighted requires positive total weight") {
  Rng rng(1);
  CHECK_THROWS_AS(rng.weighted({0.0, 0.0}), std::invalid_argument);
}
