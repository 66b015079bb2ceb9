#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "superfed/rng.hpp"

using superfed::RngStream;

TEST_CASE("same name tuple reproduces the same sequence") {
  RngStream a(42, "shuffle", 3, 7);
  RngStream b(42, "shuffle", 3, 7);
  for (int i = 0; i < 64; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("distinct name tuples give distinct sequences") {
  RngStream base(42, "shuffle", 3, 7);
  RngStream purpose(42, "lambda", 3, 7);
  RngStream id(42, "shuffle", 4, 7);
  RngStream round(42, "shuffle", 3, 8);
  RngStream seed(43, "shuffle", 3, 7);
  const auto first = base.next_u64();
  CHECK(first != purpose.next_u64());
  CHECK(first != id.next_u64());
  CHECK(first != round.next_u64());
  CHECK(first != seed.next_u64());
}

TEST_CASE("uniform01 stays in [0,1) and is roughly centered") {
  RngStream rng(1, "t");
  double sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform01();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::fabs(sum / 20000.0 - 0.5) < 0.02);
}

TEST_CASE("uniform_below covers the range without bias") {
  RngStream rng(2, "t");
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) counts[static_cast<std::size_t>(rng.uniform_below(7))]++;
  for (int c : counts) CHECK(std::fabs(c / 10000.0 - 1.0) < 0.15);
  CHECK_THROWS_AS((void)rng.uniform_below(0), std::invalid_argument);
}

TEST_CASE("normal has the right first two moments") {
  RngStream rng(3, "t");
  double sum = 0.0, sumsq = 0.0;
  const int n = 40000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::fabs(mean) < 0.03);
  CHECK(std::fabs(var - 1.0) < 0.05);
}

TEST_CASE("gamma matches its mean for shapes above and below one") {
  RngStream rng(4, "t");
  for (double shape : {0.5, 2.0, 8.0}) {
    double sum = 0.0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) sum += rng.gamma(shape);
    CHECK(std::fabs(sum / n - shape) < 0.08 * std::max(1.0, shape));
  }
  CHECK_THROWS_AS((void)rng.gamma(0.0), std::invalid_argument);
}

TEST_CASE("dirichlet draws are simplex points, concentrated alpha is near uniform") {
  RngStream rng(5, "t");
  const auto p = rng.dirichlet(1e6, 10);
  double total = 0.0;
  for (double v : p) {
    total += v;
    CHECK(std::fabs(v - 0.1) < 0.01);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("shuffle is a deterministic permutation") {
  std::vector<int> v(100);
  std::iota(v.begin(), v.end(), 0);
  std::vector<int> w = v;
  RngStream a(7, "shuffle");
  RngStream b(7, "shuffle");
  a.shuffle(v);
  b.shuffle(w);
  CHECK(v == w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
}
