#include "fedlora/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace fedlora {

std::vector<int> predict(const LoraModel& model, const Matrix& x) {
  const Matrix logits = forward(model, x);
  std::vector<int> pred(logits.rows());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = j;
    }
    pred[i] = static_cast<int>(best);
  }
  return pred;
}

Evaluation evaluate(const LoraModel& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const std::vector<int> pred = predict(model, data.x);
  const int classes = data.classes;

  std::vector<double> tp(classes, 0.0), fp(classes, 0.0), fn(classes, 0.0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == data.y[i]) {
      ++correct;
      tp[data.y[i]] += 1.0;
    } else {
      fp[pred[i]] += 1.0;
      fn[data.y[i]] += 1.0;
    }
  }

  double f1_sum = 0.0;
  for (int c = 0; c < classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    f1_sum += denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
  }

  Evaluation out;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  out.macro_f1 = f1_sum / static_cast<double>(classes);
  return out;
}

double fitted_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("fitted_slope: need two equal-length series");
  }
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("fitted_slope: degenerate x values");
  return (n * sxy - sx * sy) / denom;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace fedlora
