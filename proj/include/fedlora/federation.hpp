#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fedlora/config.hpp"
#include "fedlora/data.hpp"
#include "fedlora/lora.hpp"
#include "fedlora/metrics.hpp"
#include "fedlora/privacy.hpp"

#include <nlohmann/json_fwd.hpp>

namespace fedlora {

/// What the clients of one half-round train (and the server aggregates).
enum class Phase { TrainB, TrainA, TrainBoth };

const char* phase_name(Phase p);

enum class ScheduleVariant { Joint, FreezeA, Alternating, AlternatingBudget };

/// Cyclic per-round phase lists. Alternating is the full-budget schedule
/// [TrainB, TrainA] every round; budget variants cycle through a pattern of
/// rounds, e.g. 75% = { [TrainB, TrainA], [TrainB] }.
struct RoundSchedule {
  ScheduleVariant variant = ScheduleVariant::Alternating;
  std::vector<std::vector<Phase>> pattern;

  static RoundSchedule joint();
  static RoundSchedule freeze_a();
  static RoundSchedule alternating();
  static RoundSchedule alternating_budget(std::vector<std::vector<Phase>> pattern);
  /// Presets "100%", "75%", "50%".
  static RoundSchedule budget_preset(const std::string& name);

  const std::vector<Phase>& phases_for_round(int round) const;
};

/// One server-side aggregation barrier and its recorded deviation (max over
/// adapted layers). With DP enabled the deviation is measured on the factors
/// as uploaded; the pre-noise value is kept alongside.
struct AggregationEvent {
  int round = 0;
  Phase phase = Phase::TrainB;
  double deviation_norm = 0.0;
  double deviation_norm_prenoise = 0.0;
};

struct RoundMetrics {
  int round = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double deviation_norm = 0.0;
  double mean_norm_linear_b = 0.0;
  double mean_norm_linear_a = 0.0;
  double epsilon_spent = 0.0;
};

/// Entrywise mean of equally-shaped matrices, summed in list order.
Matrix aggregate(const std::vector<Matrix>& matrices);

struct DeviationResult {
  Matrix o;
  double norm = 0.0;
};

/// Gap between aggregating factors independently and averaging products:
///   O = | (alpha/r) [ 1/K^2 sum_B sum_A - 1/K sum_k B_k A_k ] |.
/// Computed through the pairwise-difference form, which is exactly zero when
/// all B_k (or all A_k) are bit-identical.
DeviationResult aggregation_deviation(const std::vector<Matrix>& bs,
                                      const std::vector<Matrix>& as,
                                      double alpha, std::size_t rank);

struct FederationState {
  RoundSchedule schedule;
  PrivacySpec privacy;

  LoraModel global_model;
  std::vector<LoraModel> clients;
  std::vector<std::size_t> adapted_layers;
  int round = 0;

  int local_epochs = 1;
  std::size_t batch_size = 16;
  double learning_rate = 0.1;

  std::shared_ptr<const Dataset> train;
  std::shared_ptr<const Dataset> val;
  std::shared_ptr<const Dataset> test;
  PartitionPlan plan;

  std::vector<Rng> client_rngs;
  Rng server_rng{0};

  std::vector<AggregationEvent> events;
  std::vector<NoiseTraceRow> trace;
};

/// Client rng streams are master.split(kClientRngStreamBase + k).
inline constexpr std::uint64_t kClientRngStreamBase = 100;

/// Build datasets, pretrain and freeze the base model, attach the shared
/// adapter initialization, and wire rng streams — everything derived from
/// (config, seed).
FederationState make_federation(const ExperimentConfig& config, std::uint64_t seed);

/// One communication round under the state's schedule.
void run_round(FederationState& state);

// Schedule-checked entry points.
void run_round_joint(FederationState& state);
void run_round_ffa(FederationState& state);
void run_round_deer(FederationState& state);

struct RunResult {
  std::vector<RoundMetrics> metrics;  // rows for rounds 0..T
  std::vector<NoiseTraceRow> trace;
  std::vector<AggregationEvent> events;
  FederationState state;
};

/// T rounds plus a round-0 evaluation of the untrained global model.
RunResult run_federation(const ExperimentConfig& config, std::uint64_t seed);

/// Round state (adapters + rng streams + round index) as JSON, and the
/// inverse; the base model and data are rebuilt from config when resuming.
nlohmann::json checkpoint_to_json(const FederationState& state);
void restore_checkpoint(FederationState& state, const nlohmann::json& snapshot);

}  // namespace fedlora
