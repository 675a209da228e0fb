#include "fedlora/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace fedlora {

namespace {

constexpr int kMaxSweeps = 100;
constexpr double kPairTolerance = 1e-12;

double column_dot(const Matrix& m, std::size_t p, std::size_t q) {
  double s = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) s += m(i, p) * m(i, q);
  return s;
}

void rotate_columns(Matrix& m, std::size_t p, std::size_t q, double c,
                    double s) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double vp = m(i, p);
    const double vq = m(i, q);
    m(i, p) = c * vp - s * vq;
    m(i, q) = s * vp + c * vq;
  }
}

// SVD of a tall (rows >= cols) matrix by orthogonalizing column pairs with
// Jacobi rotations applied on the right; V accumulates the rotations.
SvdResult svd_tall(const Matrix& input) {
  Matrix w = input;
  Matrix v = Matrix::identity(input.cols());
  const std::size_t n = input.cols();

  bool converged = n < 2;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double app = column_dot(w, p, p);
        const double aqq = column_dot(w, q, q);
        const double apq = column_dot(w, p, q);
        // Converged pair when the Gram off-diagonal is negligible relative
        // to the column norms; exact zeros cover null columns.
        if (apq == 0.0 ||
            std::fabs(apq) <= kPairTolerance * std::sqrt(app * aqq)) {
          continue;
        }
        converged = false;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_columns(w, p, q, c, s);
        rotate_columns(v, p, q, c, s);
      }
    }
  }
  if (!converged) {
    throw std::runtime_error(
        "svd: one-sided Jacobi did not converge within 100 sweeps");
  }

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) sigma[j] = std::sqrt(column_dot(w, j, j));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });

  SvdResult out;
  out.u = Matrix(input.rows(), n);
  out.v = Matrix(n, n);
  out.singular_values.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    out.singular_values[j] = sigma[src];
    if (sigma[src] > 0.0) {
      const double inv = 1.0 / sigma[src];
      for (std::size_t i = 0; i < input.rows(); ++i) out.u(i, j) = w(i, src) * inv;
    }
    for (std::size_t i = 0; i < n; ++i) out.v(i, j) = v(i, src);
  }

  // Null columns of U get deterministic orthonormal completions so that
  // U^T U = I holds even for rank-deficient input.
  for (std::size_t j = 0; j < n; ++j) {
    if (out.singular_values[j] > 0.0) continue;
    std::vector<double> cand(input.rows());
    for (std::size_t basis = 0; basis < input.rows(); ++basis) {
      std::fill(cand.begin(), cand.end(), 0.0);
      cand[basis] = 1.0;
      for (std::size_t jj = 0; jj < n; ++jj) {
        if (jj == j) continue;
        double proj = 0.0;
        for (std::size_t i = 0; i < input.rows(); ++i) proj += out.u(i, jj) * cand[i];
        for (std::size_t i = 0; i < input.rows(); ++i) cand[i] -= proj * out.u(i, jj);
      }
      double norm = 0.0;
      for (double x : cand) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.5) {
        for (std::size_t i = 0; i < input.rows(); ++i) out.u(i, j) = cand[i] / norm;
        break;
      }
    }
  }
  return out;
}

}  // namespace

SvdResult svd(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) {
    throw std::invalid_argument("svd: empty matrix");
  }
  if (!m.all_finite()) {
    throw std::invalid_argument("svd: non-finite entry");
  }
  if (m.rows() >= m.cols()) return svd_tall(m);
  // Wide input: decompose the transpose and swap the factors.
  SvdResult t = svd_tall(transpose(m));
  return SvdResult{std::move(t.v), std::move(t.singular_values), std::move(t.u)};
}

Matrix pinv(const Matrix& m, double tolerance) {
  SvdResult d = svd(m);
  const double smax =
      d.singular_values.empty() ? 0.0 : d.singular_values.front();
  if (tolerance < 0.0) {
    tolerance = static_cast<double>(std::max(m.rows(), m.cols())) *
                std::numeric_limits<double>::epsilon() * smax;
  }
  const std::size_t k = d.singular_values.size();
  // pinv = V diag(1/s) U^T over the singular values above tolerance.
  Matrix scaled_v(m.cols(), k);
  for (std::size_t j = 0; j < k; ++j) {
    const double s = d.singular_values[j];
    const double inv = s > tolerance ? 1.0 / s : 0.0;
    for (std::size_t i = 0; i < m.cols(); ++i) scaled_v(i, j) = d.v(i, j) * inv;
  }
  return matmul(scaled_v, transpose(d.u));
}

Matrix sample_gaussian(std::size_t rows, std::size_t cols, double std_dev,
                       Rng& rng) {
  if (std_dev < 0.0) {
    throw std::invalid_argument("sample_gaussian: negative std");
  }
  Matrix out(rows, cols);
  if (std_dev == 0.0) return out;
  for (double& v : out.mutable_data()) v = std_dev * rng.next_gaussian();
  return out;
}

}  // namespace fedlora
