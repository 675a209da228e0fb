#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlora/lora.hpp"

namespace fedlora {

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr int kConfigSchemaVersion = 1;

/// All validation failures of one config, not just the first.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> issues);
  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues);
  std::vector<std::string> issues_;
};

struct SyntheticSpec {
  int classes = 8;
  std::size_t dim = 16;
  std::size_t train_samples = 1800;
  std::size_t val_samples = 400;
  std::size_t test_samples = 800;
  std::size_t pretrain_samples = 128;
  double class_sep = 3.0;
};

struct CsvSpec {
  std::string path;
  std::string label_column = "label";
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
};

enum class DataSource { Synthetic, Csv };

struct DataSpec {
  DataSource source = DataSource::Synthetic;
  SyntheticSpec synthetic;
  CsvSpec csv;
  int clients = 12;
  double beta = 0.1;
  std::optional<std::size_t> min_shard;  // defaults to 2 * batch_size

  std::size_t min_shard_or_default(std::size_t batch_size) const {
    return min_shard ? *min_shard : 2 * batch_size;
  }
};

struct ModelSpec {
  Architecture architecture = Architecture::LinearSoftmax;
  std::size_t hidden_dim = 32;
  std::size_t rank = 8;
  double alpha = 8.0;
  double init_std = 0.02;
  std::optional<std::vector<std::size_t>> adapt_layers;  // default: every layer

  std::vector<std::size_t> adapted_layers() const {
    if (adapt_layers) return *adapt_layers;
    if (architecture == Architecture::LinearSoftmax) return {0};
    return {0, 1};
  }
};

struct TrainingSpec {
  int rounds = 50;
  int local_epochs = 5;
  std::size_t batch_size = 16;
  double learning_rate = 0.1;
  int pretrain_epochs = 30;
  double pretrain_learning_rate = 0.1;
};

struct PrivacyConfig {
  bool enabled = false;
  double epsilon = 3.0;
  std::optional<double> delta;  // defaults to 1/clients
  bool clip_auto = false;
  double clip = 0.2;
  std::vector<double> clip_grid{0.1, 0.2, 0.3, 0.4, 0.6};

  double delta_or_default(int clients) const {
    return delta ? *delta : 1.0 / static_cast<double>(clients);
  }
};

// Phase is defined by federation.hpp; config stores the pattern as strings
// and federation turns them into a schedule.
struct ExperimentConfig {
  std::string method;  // joint-lora | ffa-lora | deer
  ModelSpec model;
  DataSpec data;
  TrainingSpec training;
  PrivacyConfig privacy;
  /// deer only: per-round phase lists ("TrainB" / "TrainA" / "TrainBoth"),
  /// or one of the presets expanded at parse time.
  std::optional<std::vector<std::vector<std::string>>> pattern;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "out";

  // compare / sweep extras
  std::vector<std::string> methods;   // compare: >= 1 methods
  std::vector<double> epsilons;       // budgets; 0 means DP off
  std::vector<double> betas;          // sweep
};

/// Parse + validate JSON config text; throws ConfigError listing every
/// problem (unknown keys, missing fields, bad values, cross-field rules).
ExperimentConfig parse_config(const std::string& text);

/// Canonical JSON with all defaults materialized; reparsing yields an
/// equal config.
std::string serialize_config(const ExperimentConfig& config);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace fedlora
