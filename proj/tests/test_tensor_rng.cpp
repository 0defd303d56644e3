#include <doctest.h>

#include <cmath>

#include "srspace/tensor.hpp"
#include "test_support.hpp"

using namespace srspace;

TEST_CASE("tensor basics") {
  Tensor t(2, 3, 4);
  CHECK(t.size() == 24);
  CHECK(t.at(1, 2, 3) == 0.0);
  t.at(1, 2, 3) = 0.5;
  CHECK(t[t.size() - 1] == 0.5);
  CHECK(t.all_finite());
  t.at(0, 0, 0) = std::nan("");
  CHECK_FALSE(t.all_finite());

  CHECK_THROWS_AS(Tensor(0, 1, 1), std::invalid_argument);
}

TEST_CASE("tensor arithmetic and clamp") {
  Tensor a(1, 2, 2), b(1, 2, 2);
  a.fill(0.5);
  b.fill(0.25);
  const Tensor c = a + b;
  CHECK(c[0] == doctest::Approx(0.75));
  CHECK(max_abs_diff(a, b) == doctest::Approx(0.25));
  CHECK(mse(a, b) == doctest::Approx(0.0625));

  Tensor d(1, 1, 2);
  d[0] = -0.5;
  d[1] = 1.5;
  const Tensor e = clamp01(d);
  CHECK(e[0] == 0.0);
  CHECK(e[1] == 1.0);
}

TEST_CASE("rng determinism and normal statistics") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng r(7);
  double sum = 0.0, sum2 = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::fabs(mean) < 0.01);
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));

  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("mix_seed decorrelates") {
  CHECK(mix_seed(0, 0) != mix_seed(0, 1));
  CHECK(mix_seed(0, 0) != mix_seed(1, 0));
  CHECK(mix_seed(5, 9) == mix_seed(5, 9));
}
