#pragma once

#include <vector>

#include "fedlora/data.hpp"
#include "fedlora/lora.hpp"

namespace fedlora {

struct Evaluation {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

/// Argmax predictions, ties broken toward the lower class index.
std::vector<int> predict(const LoraModel& model, const Matrix& x);

/// Accuracy and macro-F1 (unweighted mean of per-class F1, 0/0 counted as 0).
Evaluation evaluate(const LoraModel& model, const Dataset& data);

/// Least-squares slope of y against x; x and y must have equal size >= 2.
double fitted_slope(const std::vector<double>& x, const std::vector<double>& y);

double mean(const std::vector<double>& v);
/// Sample standard deviation (n-1 denominator); 0 for fewer than 2 values.
double sample_std(const std::vector<double>& v);

}  // namespace fedlora
