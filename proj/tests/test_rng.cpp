#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedlora/linalg.hpp"
#include "fedlora/rng.hpp"

using namespace fedlora;

TEST_CASE("same seed, same sequence") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(a.position() == 100);
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) {
    if (a.next_u64() == b.next_u64()) ++same;
  }
  CHECK(same == 0);
}

TEST_CASE("uniform doubles live in [0, 1)") {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("split streams are independent of parent position") {
  Rng parent(9);
  const Rng child_before = parent.split(3);
  parent.next_u64();
  const Rng child_after = parent.split(3);
  Rng c1 = child_before, c2 = child_after;
  for (int i = 0; i < 16; ++i) CHECK(c1.next_u64() == c2.next_u64());

  Rng other = parent.split(4);
  Rng three = parent.split(3);
  bool all_same = true;
  for (int i = 0; i < 16; ++i) {
    if (other.next_u64() != three.next_u64()) all_same = false;
  }
  CHECK(!all_same);
}

TEST_CASE("restore continues the stream exactly") {
  Rng rng(77);
  for (int i = 0; i < 10; ++i) rng.next_gaussian();
  Rng copy = Rng::restore(rng.seed(), rng.state(), rng.position());
  for (int i = 0; i < 50; ++i) CHECK(copy.next_u64() == rng.next_u64());
}

TEST_CASE("gaussian sampling statistics") {
  // Law-of-large-numbers oracle: 1e6 draws at std 0.5 give variance
  // 0.25 within +-0.01.
  Rng rng(123);
  const Matrix samples = sample_gaussian(1000, 1000, 0.5, rng);
  double sum = 0.0, sumsq = 0.0;
  for (double v : samples.data()) {
    sum += v;
    sumsq += v * v;
  }
  const double n = static_cast<double>(samples.size());
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(var == doctest::Approx(0.25).epsilon(0.04));
  CHECK(std::fabs(var - 0.25) < 0.01);
  CHECK(std::fabs(mean) < 0.01);
}

TEST_CASE("sample_gaussian degenerate and error cases") {
  Rng rng(1);
  const Matrix zeros = sample_gaussian(3, 4, 0.0, rng);
  CHECK(frobenius_norm(zeros) == 0.0);
  CHECK(rng.position() == 0);

  Rng r1(99), r2(99);
  CHECK(bit_equal(sample_gaussian(2, 2, 1.0, r1), sample_gaussian(2, 2, 1.0, r2)));

  CHECK_THROWS_AS(sample_gaussian(2, 2, -0.5, rng), std::invalid_argument);
}
