#include "fedlora/privacy.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace fedlora {

PrivacySpec PrivacySpec::calibrated(double epsilon, double delta, double clip,
                                    int clients, int rounds) {
  if (clip <= 0.0) throw std::invalid_argument("PrivacySpec: clip must be > 0");
  if (clients < 1) throw std::invalid_argument("PrivacySpec: clients must be >= 1");
  PrivacySpec spec;
  spec.enabled = true;
  spec.epsilon = epsilon;
  spec.delta = delta;
  spec.clip = clip;
  spec.clients = clients;
  spec.rounds = rounds;
  spec.sigma = calibrate_sigma(epsilon, delta, rounds, clients);
  return spec;
}

PrivacySpec PrivacySpec::disabled() { return PrivacySpec{}; }

Matrix clip_update(const Matrix& delta, double c) {
  if (c <= 0.0) throw std::invalid_argument("clip_update: clip must be > 0");
  const double norm = frobenius_norm(delta);
  if (norm <= c) return delta;
  return (c / norm) * delta;
}

Matrix mechanism_noise(std::size_t rows, std::size_t cols,
                       const PrivacySpec& spec, Rng& rng) {
  if (!spec.enabled) {
    throw std::invalid_argument("mechanism_noise: privacy spec is disabled");
  }
  const double std_dev =
      spec.sigma * spec.clip / std::sqrt(static_cast<double>(spec.clients));
  return sample_gaussian(rows, cols, std_dev, rng);
}

Matrix regulate_for_b(const Matrix& xi_w, const Matrix& a) {
  if (xi_w.cols() != a.cols()) {
    throw std::invalid_argument("regulate_for_b: xi_w and A column mismatch");
  }
  return matmul(xi_w, pinv(a));
}

Matrix regulate_for_a(const Matrix& xi_w, const Matrix& b) {
  if (xi_w.rows() != b.rows()) {
    throw std::invalid_argument("regulate_for_a: xi_w and B row mismatch");
  }
  return matmul(pinv(b), xi_w);
}

NoiseDecomposition noise_decomposition(const Matrix& b, const Matrix& a,
                                       const Matrix& xi_b, const Matrix& xi_a,
                                       double alpha, std::size_t rank) {
  if (rank == 0) throw std::invalid_argument("noise_decomposition: rank must be >= 1");
  const double scale = alpha / static_cast<double>(rank);
  NoiseDecomposition out;
  out.linear_b = scale * matmul(xi_b, a);
  out.linear_a = scale * matmul(b, xi_a);
  out.quadratic = scale * matmul(xi_b, xi_a);
  return out;
}

double epsilon_of(double sigma, double delta, int rounds, int /*clients*/) {
  if (sigma <= 0.0) throw std::invalid_argument("epsilon_of: sigma must be > 0");
  if (delta <= 0.0 || delta >= 1.0) {
    throw std::invalid_argument("epsilon_of: delta must be in (0, 1)");
  }
  if (rounds < 1) throw std::invalid_argument("epsilon_of: rounds must be >= 1");
  const double log_inv_delta = std::log(1.0 / delta);
  const double rdp_per_alpha = static_cast<double>(rounds) / (2.0 * sigma * sigma);
  double best = std::numeric_limits<double>::infinity();
  for (double alpha = 1.25; alpha <= 512.0 + 1e-9; alpha += 0.25) {
    const double eps = rdp_per_alpha * alpha + log_inv_delta / (alpha - 1.0);
    if (eps < best) best = eps;
  }
  return best;
}

double calibrate_sigma(double epsilon, double delta, int rounds, int clients) {
  if (epsilon <= 0.0) throw std::invalid_argument("calibrate_sigma: epsilon must be > 0");
  double lo = 1e-3;
  double hi = 1e6;
  if (epsilon_of(hi, delta, rounds, clients) > epsilon) {
    throw std::runtime_error("calibrate_sigma: epsilon " + std::to_string(epsilon) +
                             " unattainable within sigma bounds [1e-3, 1e6]");
  }
  if (epsilon_of(lo, delta, rounds, clients) <= epsilon) return lo;
  while ((hi - lo) / lo > 1e-4) {
    const double mid = 0.5 * (lo + hi);
    if (epsilon_of(mid, delta, rounds, clients) <= epsilon) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

}  // namespace fedlora
