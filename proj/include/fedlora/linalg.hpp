#pragma once

#include <vector>

#include "fedlora/matrix.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {

/// Thin SVD M = U diag(S) V^T with k = min(rows, cols).
/// U is rows x k, V is cols x k, S is non-negative and non-increasing.
struct SvdResult {
  Matrix u;
  std::vector<double> singular_values;
  Matrix v;
};

/// One-sided Jacobi SVD. Deterministic; throws std::runtime_error if the
/// sweep cap (100) is reached before convergence.
SvdResult svd(const Matrix& m);

/// Moore-Penrose pseudo-inverse via SVD; singular values <= tolerance are
/// treated as zero. Negative tolerance selects the default
/// max(rows, cols) * machine epsilon * largest singular value.
Matrix pinv(const Matrix& m, double tolerance = -1.0);

/// Matrix of i.i.d. N(0, std^2) entries drawn from rng. std = 0 returns
/// exact zeros without consuming draws.
Matrix sample_gaussian(std::size_t rows, std::size_t cols, double std_dev,
                       Rng& rng);

}  // namespace fedlora
