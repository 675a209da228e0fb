#pragma once

#include <cstdint>

#include "fedlora/linalg.hpp"
#include "fedlora/matrix.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {

/// Client-level DP parameters. When enabled, sigma is the Gaussian noise
/// multiplier calibrated so that the T-round composition stays within
/// (epsilon, delta). delta conventionally defaults to 1/clients.
struct PrivacySpec {
  bool enabled = false;
  double epsilon = 0.0;
  double delta = 0.0;
  double clip = 0.0;
  double sigma = 0.0;
  int clients = 0;
  int rounds = 0;

  /// Build an enabled spec with sigma from the accountant.
  static PrivacySpec calibrated(double epsilon, double delta, double clip,
                                int clients, int rounds);
  static PrivacySpec disabled();
};

/// Norms of the noise terms observed at one (round, layer), averaged over
/// clients: |xi_B A|_F, |B xi_A|_F and the full-size draw |xi_W|_F.
struct NoiseTraceRow {
  int round = 0;
  int layer = 0;
  double norm_linear_b = 0.0;
  double norm_linear_a = 0.0;
  double norm_base = 0.0;
};

/// Scale delta by min(1, c / |delta|_F): norm capped at c, direction kept.
Matrix clip_update(const Matrix& delta, double c);

/// i.i.d. Gaussian with per-entry std sigma * clip / sqrt(clients).
Matrix mechanism_noise(std::size_t rows, std::size_t cols,
                       const PrivacySpec& spec, Rng& rng);

/// Least-squares-optimal factor noise: minimizes |xi_B A - xi_W|_F over
/// xi_B, i.e. xi_W pinv(A) (minimum-norm under rank deficiency).
Matrix regulate_for_b(const Matrix& xi_w, const Matrix& a);

/// Symmetric side: minimizes |B xi_A - xi_W|_F, i.e. pinv(B) xi_W.
Matrix regulate_for_a(const Matrix& xi_w, const Matrix& b);

struct NoiseDecomposition {
  Matrix linear_b;   // (alpha/r) xi_B A
  Matrix linear_a;   // (alpha/r) B xi_A
  Matrix quadratic;  // (alpha/r) xi_B xi_A
};

/// Additive split of (alpha/r)[(B+xi_B)(A+xi_A) - B A].
NoiseDecomposition noise_decomposition(const Matrix& b, const Matrix& a,
                                       const Matrix& xi_b, const Matrix& xi_a,
                                       double alpha, std::size_t rank);

/// Privacy spent by `rounds` compositions of the Gaussian mechanism at noise
/// multiplier sigma, via Renyi DP over the alpha grid {1.25, 1.5, ..., 512}:
///   epsilon = min_alpha [ rounds*alpha/(2 sigma^2) + ln(1/delta)/(alpha-1) ].
/// Full participation; `clients` does not enter the composition.
double epsilon_of(double sigma, double delta, int rounds, int clients);

/// Smallest sigma in [1e-3, 1e6] (binary search, relative tolerance 1e-4)
/// with epsilon_of(sigma, delta, rounds) <= epsilon.
double calibrate_sigma(double epsilon, double delta, int rounds, int clients);

}  // namespace fedlora
