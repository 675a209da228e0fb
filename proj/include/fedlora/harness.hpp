#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedlora/config.hpp"
#include "fedlora/federation.hpp"

namespace fedlora {

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::vector<RoundMetrics> metrics;
};

struct RunArtifacts {
  std::string directory;
  std::vector<std::string> metric_files;
  std::vector<std::string> trace_files;  // present only with DP enabled
  std::string summary_file;
  std::string config_file;
  std::vector<SeedOutcome> outcomes;
  double chosen_clip = 0.0;  // resolved value when privacy.clip = auto
};

/// One experiment: a federation run per seed, metrics CSV per seed, noise
/// trace CSV per seed when DP is on, and a summary JSON with mean/std of the
/// final-round metrics. Reruns with the same config are byte-identical.
RunArtifacts run_experiment(const ExperimentConfig& config);

struct ComparisonRow {
  std::string method;
  std::string budget;  // formatted epsilon or "off"
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double macro_f1_mean = 0.0;
  double macro_f1_std = 0.0;
};

struct ComparisonResult {
  std::vector<ComparisonRow> rows;
  std::string table_csv;
  std::string table_txt;
  std::string curves_csv;
};

/// Aligned method-by-budget table; the config carries the method list and
/// (optionally) an epsilon list, 0 meaning DP off.
ComparisonResult compare_methods(const ExperimentConfig& config);

/// Variant taking fully-formed per-method configs; every field outside
/// {method, methods, pattern} must agree or the call is rejected.
ComparisonResult compare_methods(const std::vector<ExperimentConfig>& configs);

struct SweepResult {
  std::string results_csv;
  int runs = 0;
};

/// Cartesian product over methods x epsilons x betas x seeds.
SweepResult sweep(const ExperimentConfig& config);

struct TraceSeries {
  std::string term;  // "linear_b" | "linear_a"
  std::string file;
  double slope = 0.0;
  bool slope_defined = false;
};

/// Turn a noise-trace CSV into per-term (round, norm) series files with the
/// fitted slope appended as a footer comment.
std::vector<TraceSeries> emit_noise_trace_plotdata(const std::string& trace_csv,
                                                   const std::string& out_dir,
                                                   const std::string& method_label,
                                                   const std::string& epsilon_label);

/// Parse a metrics CSV produced by run_experiment.
std::vector<RoundMetrics> read_metrics_csv(const std::string& path,
                                           std::uint64_t* seed_out = nullptr);

std::string format_double(double v);

}  // namespace fedlora
