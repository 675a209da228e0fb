#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fedlora/privacy.hpp"

using namespace fedlora;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  return sample_gaussian(rows, cols, 1.0, rng);
}

double residual(const Matrix& xi_b, const Matrix& a, const Matrix& xi_w) {
  return frobenius_norm(matmul(xi_b, a) - xi_w);
}

// Independent least-squares oracle: solve (A A^T) X = A xi_w^T by Gaussian
// elimination with partial pivoting, so xi_b = (solution)^T.
Matrix normal_equations_oracle(const Matrix& xi_w, const Matrix& a) {
  const std::size_t r = a.rows();
  const Matrix gram = matmul(a, transpose(a));          // r x r
  const Matrix rhs = matmul(a, transpose(xi_w));        // r x m
  Matrix aug(r, r + rhs.cols());
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < r; ++j) aug(i, j) = gram(i, j);
    for (std::size_t j = 0; j < rhs.cols(); ++j) aug(i, r + j) = rhs(i, j);
  }
  for (std::size_t col = 0; col < r; ++col) {
    std::size_t pivot = col;
    for (std::size_t i = col + 1; i < r; ++i) {
      if (std::fabs(aug(i, col)) > std::fabs(aug(pivot, col))) pivot = i;
    }
    for (std::size_t j = 0; j < aug.cols(); ++j) std::swap(aug(col, j), aug(pivot, j));
    for (std::size_t i = 0; i < r; ++i) {
      if (i == col) continue;
      const double f = aug(i, col) / aug(col, col);
      for (std::size_t j = col; j < aug.cols(); ++j) aug(i, j) -= f * aug(col, j);
    }
  }
  Matrix xi_b(xi_w.rows(), r);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < rhs.cols(); ++j) {
      xi_b(j, i) = aug(i, r + j) / aug(i, i);
    }
  }
  return xi_b;
}

}  // namespace

TEST_CASE("clip passes small updates through untouched") {
  Rng rng(1);
  Matrix m = random_matrix(2, 3, rng);
  m = (0.5 / frobenius_norm(m)) * m;
  CHECK(bit_equal(clip_update(m, 1.0), m));
  CHECK(bit_equal(clip_update(Matrix(3, 3), 1.0), Matrix(3, 3)));
}

TEST_CASE("clip hand example and projection properties") {
  const Matrix clipped = clip_update(Matrix{{3, 4}}, 1.0);
  CHECK(clipped(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(clipped(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix m = random_matrix(4, 4, rng);
    const double c = 0.1 + rng.next_double();
    const Matrix once = clip_update(m, c);
    CHECK(frobenius_norm(once) <= c + 1e-12);
    CHECK(max_abs_diff(clip_update(once, c), once) <= 1e-12);
  }
  CHECK_THROWS_AS(clip_update(Matrix(2, 2), 0.0), std::invalid_argument);
}

TEST_CASE("mechanism noise variance matches sigma^2 C^2 / K") {
  PrivacySpec spec;
  spec.enabled = true;
  spec.sigma = 1.0;
  spec.clip = 1.0;
  spec.clients = 4;
  Rng rng(3);
  const Matrix samples = mechanism_noise(1000, 1000, spec, rng);
  double sum = 0.0, sumsq = 0.0;
  for (double v : samples.data()) {
    sum += v;
    sumsq += v * v;
  }
  const double n = static_cast<double>(samples.size());
  const double var = sumsq / n - (sum / n) * (sum / n);
  CHECK(std::fabs(var - 0.25) / 0.25 < 0.02);

  Rng r1(5), r2(5);
  CHECK(bit_equal(mechanism_noise(3, 3, spec, r1), mechanism_noise(3, 3, spec, r2)));

  spec.sigma = 0.0;
  Rng r3(6);
  CHECK(frobenius_norm(mechanism_noise(5, 5, spec, r3)) == 0.0);

  PrivacySpec off = PrivacySpec::disabled();
  CHECK_THROWS_AS(mechanism_noise(2, 2, off, rng), std::invalid_argument);
}

TEST_CASE("regulate_for_b trivial and invertible cases") {
  Rng rng(7);
  const Matrix a = random_matrix(2, 5, rng);
  CHECK(frobenius_norm(regulate_for_b(Matrix(3, 5), a)) == 0.0);

  // Square invertible A: the regulated noise reproduces xi_w exactly.
  const Matrix a_inv = random_matrix(4, 4, rng);
  const Matrix xi_w = random_matrix(3, 4, rng);
  const Matrix xi_b = regulate_for_b(xi_w, a_inv);
  const Matrix b = random_matrix(3, 4, rng);
  CHECK(frobenius_norm(matmul(b + xi_b, a_inv) - (matmul(b, a_inv) + xi_w)) < 1e-10);
}

TEST_CASE("regulate_for_b hand example") {
  // A = [[1, 1]], xi_w = [[1, 0]]: normal equations give xi_b = [[0.5]] and
  // the residual image [[0.5, 0.5]] is the projection onto rowspace(A).
  const Matrix xi_b = regulate_for_b(Matrix{{1, 0}}, Matrix{{1, 1}});
  CHECK(xi_b(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  const Matrix image = matmul(xi_b, Matrix{{1, 1}});
  CHECK(image(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(image(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("regulate_for_a trivial, invertible and hand cases") {
  Rng rng(8);
  const Matrix xi_w = random_matrix(4, 3, rng);
  CHECK(frobenius_norm(regulate_for_a(xi_w, Matrix(4, 2))) == 0.0);  // B = 0

  const Matrix b_inv = random_matrix(4, 4, rng);
  const Matrix xi_a = regulate_for_a(xi_w, b_inv);
  CHECK(frobenius_norm(matmul(b_inv, xi_a) - xi_w) < 1e-9);

  const Matrix xa = regulate_for_a(Matrix{{2}, {0}}, Matrix{{1}, {1}});
  CHECK(xa(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  const Matrix image = matmul(Matrix{{1}, {1}}, xa);
  CHECK(image(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(image(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("regulators match the normal-equations oracle") {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 2 + rng.next_u64() % 5;
    const std::size_t n = 2 + rng.next_u64() % 5;
    const std::size_t r = 1 + rng.next_u64() % std::min<std::size_t>(n, 3);
    const Matrix a = random_matrix(r, n, rng);
    const Matrix xi_w = random_matrix(m, n, rng);
    const Matrix got = regulate_for_b(xi_w, a);
    const Matrix want = normal_equations_oracle(xi_w, a);
    CHECK(frobenius_norm(got - want) / frobenius_norm(want) < 1e-8);
  }
}

TEST_CASE("regulated noise is a least-squares minimizer") {
  Rng rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(2, 5, rng);
    const Matrix xi_w = random_matrix(3, 5, rng);
    const Matrix best = regulate_for_b(xi_w, a);
    const double best_residual = residual(best, a, xi_w);
    for (int p = 0; p < 5; ++p) {
      Matrix dir = random_matrix(3, 2, rng);
      dir = (1e-3 / frobenius_norm(dir)) * dir;
      CHECK(residual(best + dir, a, xi_w) > best_residual);
    }
    // Non-amplification: the image never exceeds the full-size noise.
    CHECK(frobenius_norm(matmul(best, a)) <= frobenius_norm(xi_w) * (1.0 + 1e-12));
  }
}

TEST_CASE("projection identity for the regulated image") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 4 + rng.next_u64() % 4;
    const std::size_t r = 1 + rng.next_u64() % (n - 1);  // r < n regime
    const Matrix a = random_matrix(r, n, rng);
    const Matrix b = random_matrix(3, r, rng);
    const Matrix xi_w = random_matrix(3, n, rng);
    const Matrix xi_b = regulate_for_b(xi_w, a);
    const Matrix projector = matmul(pinv(a), a);  // n x n row-space projector
    const Matrix lhs = matmul(b + xi_b, a);
    const Matrix rhs = matmul(b, a) + matmul(xi_w, projector);
    CHECK(frobenius_norm(lhs - rhs) < 1e-10);
  }
}

TEST_CASE("noise decomposition reconstructs the product expansion") {
  Rng rng(12);
  const Matrix b = random_matrix(4, 2, rng);
  const Matrix a = random_matrix(2, 5, rng);

  const NoiseDecomposition zero =
      noise_decomposition(b, a, Matrix(4, 2), Matrix(2, 5), 8.0, 2);
  CHECK(frobenius_norm(zero.linear_b) == 0.0);
  CHECK(frobenius_norm(zero.linear_a) == 0.0);
  CHECK(frobenius_norm(zero.quadratic) == 0.0);

  for (int trial = 0; trial < 20; ++trial) {
    const Matrix xi_b = random_matrix(4, 2, rng);
    const Matrix xi_a = random_matrix(2, 5, rng);
    const double alpha = 0.5 + rng.next_double() * 4.0;
    const NoiseDecomposition d = noise_decomposition(b, a, xi_b, xi_a, alpha, 2);
    const double scale = alpha / 2.0;
    const Matrix total =
        scale * (matmul(b + xi_b, a + xi_a) - matmul(b, a));
    const Matrix sum = d.linear_b + d.linear_a + d.quadratic;
    CHECK(frobenius_norm(total - sum) / frobenius_norm(total) < 1e-12);
  }

  // One-sided injection: only the linear B term survives.
  const Matrix xi_b = random_matrix(4, 2, rng);
  const NoiseDecomposition one_sided =
      noise_decomposition(b, a, xi_b, Matrix(2, 5), 8.0, 2);
  CHECK(frobenius_norm(one_sided.linear_a) == 0.0);
  CHECK(frobenius_norm(one_sided.quadratic) == 0.0);
  CHECK(frobenius_norm(one_sided.linear_b) > 0.0);
}

TEST_CASE("epsilon_of matches the scripted oracle and is monotone") {
  // Frozen by tests/oracles/rdp_oracle.py before the accountant was written.
  CHECK(epsilon_of(4.0, 1.0 / 12.0, 50, 12) ==
        doctest::Approx(5.50355031983).epsilon(1e-9));

  CHECK(epsilon_of(100.0, 1e-2, 1, 1) < epsilon_of(1.0, 1e-2, 1, 1));
  CHECK(epsilon_of(2.0, 1e-2, 2, 1) >= epsilon_of(2.0, 1e-2, 1, 1));

  // Monotone on sampled grids: strictly decreasing in sigma, nondecreasing
  // in rounds.
  double prev = epsilon_of(0.5, 1.0 / 12.0, 10, 1);
  for (double sigma : {1.0, 2.0, 4.0, 8.0, 16.0}) {
    const double eps = epsilon_of(sigma, 1.0 / 12.0, 10, 1);
    CHECK(eps < prev);
    prev = eps;
  }
  prev = epsilon_of(4.0, 1.0 / 12.0, 1, 1);
  for (int rounds : {2, 5, 10, 50, 100}) {
    const double eps = epsilon_of(4.0, 1.0 / 12.0, rounds, 1);
    CHECK(eps >= prev);
    prev = eps;
  }

  CHECK_THROWS_AS(epsilon_of(0.0, 0.1, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(epsilon_of(1.0, 0.0, 1, 1), std::invalid_argument);
  CHECK_THROWS_AS(epsilon_of(1.0, 0.1, 0, 1), std::invalid_argument);
}

TEST_CASE("calibrate_sigma round trip and oracle value") {
  const double delta = 1.0 / 12.0;
  // Frozen by tests/oracles/rdp_oracle.py.
  CHECK(calibrate_sigma(3.0, delta, 50, 12) ==
        doctest::Approx(6.53283087053).epsilon(1e-3));

  double prev_sigma = 0.0;
  for (double eps : {6.0, 3.0, 1.0, 0.5, 0.1}) {
    const double sigma = calibrate_sigma(eps, delta, 50, 12);
    CHECK(epsilon_of(sigma, delta, 50, 12) <= eps);
    CHECK(sigma > prev_sigma);  // smaller budget needs more noise
    prev_sigma = sigma;
  }

  CHECK_THROWS_AS(calibrate_sigma(1e-9, 0.5, 1, 1), std::runtime_error);
  CHECK_THROWS_AS(calibrate_sigma(0.0, 0.5, 1, 1), std::invalid_argument);
}

TEST_CASE("calibrated privacy specs satisfy their own budget") {
  const PrivacySpec spec = PrivacySpec::calibrated(1.0, 1.0 / 12.0, 0.2, 12, 50);
  CHECK(spec.enabled);
  CHECK(epsilon_of(spec.sigma, spec.delta, spec.rounds, spec.clients) <= spec.epsilon);
}
