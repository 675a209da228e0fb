#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include <nlohmann/json.hpp>

#include "fedlora/federation.hpp"

using namespace fedlora;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  return sample_gaussian(rows, cols, 1.0, rng);
}

ExperimentConfig tiny_config(const std::string& method, int clients, int rounds) {
  ExperimentConfig cfg;
  cfg.method = method;
  cfg.data.clients = clients;
  cfg.data.beta = 0.5;
  cfg.data.min_shard = 2;
  cfg.data.synthetic.classes = 4;
  cfg.data.synthetic.dim = 8;
  cfg.data.synthetic.train_samples = 240;
  cfg.data.synthetic.val_samples = 40;
  cfg.data.synthetic.test_samples = 120;
  cfg.data.synthetic.pretrain_samples = 48;
  cfg.data.synthetic.class_sep = 2.5;
  cfg.model.rank = 2;
  cfg.model.alpha = 2.0;
  cfg.training.rounds = rounds;
  cfg.training.local_epochs = 2;
  cfg.training.batch_size = 8;
  cfg.training.learning_rate = 0.2;
  cfg.training.pretrain_epochs = 5;
  cfg.training.pretrain_learning_rate = 0.2;
  cfg.seeds = {1};
  return cfg;
}

// Direct transcription of the deviation definition, as an oracle.
DeviationResult deviation_oracle(const std::vector<Matrix>& bs,
                                 const std::vector<Matrix>& as, double alpha,
                                 std::size_t rank) {
  const double k = static_cast<double>(bs.size());
  Matrix sum_b = bs[0];
  Matrix sum_a = as[0];
  Matrix sum_prod = matmul(bs[0], as[0]);
  for (std::size_t i = 1; i < bs.size(); ++i) {
    sum_b = sum_b + bs[i];
    sum_a = sum_a + as[i];
    sum_prod = sum_prod + matmul(bs[i], as[i]);
  }
  const double scale = alpha / static_cast<double>(rank);
  const Matrix o = entrywise_abs(
      scale * ((1.0 / (k * k)) * matmul(sum_b, sum_a) - (1.0 / k) * sum_prod));
  return {o, frobenius_norm(o)};
}

}  // namespace

TEST_CASE("aggregate basics") {
  Rng rng(1);
  const Matrix m = random_matrix(3, 2, rng);
  CHECK(bit_equal(aggregate({m, m, m, m}), m));  // power-of-two count is exact
  CHECK(max_abs_diff(aggregate({m, m, m}), m) < 1e-15);

  const Matrix mid = aggregate({Matrix{{0}}, Matrix{{2}}});
  CHECK(mid(0, 0) == 1.0);

  const Matrix a = random_matrix(3, 2, rng);
  const Matrix b = random_matrix(3, 2, rng);
  CHECK(bit_equal(aggregate({transpose(a), transpose(b)}),
                  transpose(aggregate({a, b}))));

  CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
  CHECK_THROWS_AS(aggregate({Matrix(2, 2), Matrix(2, 3)}), std::invalid_argument);
}

TEST_CASE("deviation vanishes exactly for shared factors") {
  Rng rng(2);
  const Matrix b = random_matrix(4, 2, rng);
  const Matrix a1 = random_matrix(2, 5, rng);
  const Matrix a2 = random_matrix(2, 5, rng);
  CHECK(aggregation_deviation({b, b, b}, {a1, a2, a1}, 8.0, 2).norm == 0.0);

  const Matrix b1 = random_matrix(4, 2, rng);
  const Matrix b2 = random_matrix(4, 2, rng);
  CHECK(aggregation_deviation({b1, b2, b1}, {a1, a1, a1}, 8.0, 2).norm == 0.0);

  CHECK(aggregation_deviation({b1}, {a1}, 8.0, 2).norm == 0.0);  // single client
}

TEST_CASE("deviation hand example") {
  const DeviationResult dev = aggregation_deviation(
      {Matrix{{1}}, Matrix{{0}}}, {Matrix{{1}}, Matrix{{2}}}, 1.0, 1);
  CHECK(dev.o(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(dev.norm == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("deviation equals the direct definition on random factors") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Matrix> bs, as;
    const std::size_t clients = 2 + rng.next_u64() % 5;
    for (std::size_t k = 0; k < clients; ++k) {
      bs.push_back(random_matrix(4, 2, rng));
      as.push_back(random_matrix(2, 6, rng));
    }
    const DeviationResult got = aggregation_deviation(bs, as, 4.0, 2);
    const DeviationResult want = deviation_oracle(bs, as, 4.0, 2);
    CHECK(frobenius_norm(got.o - want.o) <= 1e-12 * (1.0 + want.norm));
  }

  CHECK_THROWS_AS(aggregation_deviation({}, {}, 1.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(
      aggregation_deviation({Matrix(2, 2)}, {Matrix(3, 2)}, 1.0, 1),
      std::invalid_argument);
}

TEST_CASE("single-client joint round is centralized training") {
  const ExperimentConfig cfg = [&] {
    ExperimentConfig c = tiny_config("joint-lora", 1, 1);
    c.training.local_epochs = 1;
    return c;
  }();
  FederationState state = make_federation(cfg, 7);
  const LoraModel initial = state.global_model;
  Rng manual_rng = Rng(7).split(kClientRngStreamBase + 0);

  run_round_joint(state);
  REQUIRE(state.events.size() == 1);
  CHECK(state.events[0].deviation_norm == 0.0);

  LoraModel manual = initial;
  std::vector<std::size_t> shard = state.plan.shards[0];
  local_train(manual, *state.train, shard, TrainableSelector::Both, 1,
              cfg.training.batch_size, cfg.training.learning_rate, manual_rng);
  CHECK(bit_equal(state.global_model.layers[0].adapter->a, manual.layers[0].adapter->a));
  CHECK(bit_equal(state.global_model.layers[0].adapter->b, manual.layers[0].adapter->b));
}

TEST_CASE("joint round deviation matches an external replay") {
  ExperimentConfig cfg = tiny_config("joint-lora", 2, 1);
  cfg.data.beta = 0.1;
  FederationState state = make_federation(cfg, 11);
  const LoraModel initial = state.global_model;
  std::vector<Rng> rngs = state.client_rngs;  // copies, pre-round positions

  run_round_joint(state);
  REQUIRE(state.events.size() == 1);
  CHECK(state.events[0].deviation_norm > 1e-6);

  std::vector<Matrix> bs, as;
  for (int k = 0; k < 2; ++k) {
    LoraModel replay = initial;
    local_train(replay, *state.train, state.plan.shards[k], TrainableSelector::Both,
                cfg.training.local_epochs, cfg.training.batch_size,
                cfg.training.learning_rate, rngs[k]);
    bs.push_back(replay.layers[0].adapter->b);
    as.push_back(replay.layers[0].adapter->a);
  }
  const DeviationResult want = deviation_oracle(bs, as, cfg.model.alpha, cfg.model.rank);
  CHECK(state.events[0].deviation_norm ==
        doctest::Approx(want.norm).epsilon(1e-10));
}

TEST_CASE("identical shards and streams give zero joint deviation") {
  ExperimentConfig cfg = tiny_config("joint-lora", 3, 1);
  FederationState state = make_federation(cfg, 13);
  for (auto& shard : state.plan.shards) shard = state.plan.shards[0];
  for (auto& rng : state.client_rngs) rng = Rng(99);
  run_round_joint(state);
  CHECK(state.events[0].deviation_norm == 0.0);
}

TEST_CASE("freeze-A keeps A immutable with zero deviation") {
  ExperimentConfig cfg = tiny_config("ffa-lora", 3, 5);
  FederationState state = make_federation(cfg, 17);
  const Matrix a_init = state.global_model.layers[0].adapter->a;
  for (int t = 0; t < 5; ++t) run_round_ffa(state);
  CHECK(bit_equal(state.global_model.layers[0].adapter->a, a_init));
  for (const auto& client : state.clients) {
    CHECK(bit_equal(client.layers[0].adapter->a, a_init));
  }
  for (const auto& e : state.events) CHECK(e.deviation_norm == 0.0);
  CHECK(state.events.size() == 5);  // one aggregation per round
  CHECK(state.round == 5);
}

TEST_CASE("freeze-A under DP never produces linear-A noise") {
  ExperimentConfig cfg = tiny_config("ffa-lora", 3, 3);
  cfg.privacy.enabled = true;
  cfg.privacy.epsilon = 3.0;
  cfg.privacy.clip = 0.2;
  FederationState state = make_federation(cfg, 19);
  for (int t = 0; t < 3; ++t) run_round_ffa(state);
  REQUIRE(!state.trace.empty());
  for (const auto& row : state.trace) {
    CHECK(row.norm_linear_a == 0.0);
    CHECK(row.norm_linear_b > 0.0);
    CHECK(row.norm_base == 0.0);  // unregulated factor noise, no full-size draw
  }
  for (const auto& e : state.events) CHECK(e.deviation_norm == 0.0);
}

TEST_CASE("alternating rounds keep every aggregation deviation at zero") {
  for (bool dp : {false, true}) {
    ExperimentConfig cfg = tiny_config("deer", 3, 3);
    cfg.data.beta = 0.1;
    if (dp) {
      cfg.privacy.enabled = true;
      cfg.privacy.epsilon = 1.0;
      cfg.privacy.clip = 0.1;
    }
    FederationState state = make_federation(cfg, 23);
    for (int t = 0; t < 3; ++t) run_round_deer(state);
    CHECK(state.events.size() == 6);  // two half-rounds per round
    for (const auto& e : state.events) {
      CHECK(e.deviation_norm <= 1e-10);
      CHECK(e.deviation_norm_prenoise <= 1e-10);
    }
    // Synchronization: every client leaves the barrier equal to the global.
    for (const auto& client : state.clients) {
      CHECK(bit_equal(client.layers[0].adapter->b,
                      state.global_model.layers[0].adapter->b));
      CHECK(bit_equal(client.layers[0].adapter->a,
                      state.global_model.layers[0].adapter->a));
    }
    if (dp) {
      for (const auto& row : state.trace) {
        CHECK(row.norm_base > 0.0);  // regulated path draws full-size noise
      }
    }
  }
}

TEST_CASE("single-client alternating equals centralized alternation") {
  ExperimentConfig cfg = tiny_config("deer", 1, 2);
  cfg.training.local_epochs = 1;
  FederationState state = make_federation(cfg, 29);
  const LoraModel initial = state.global_model;
  Rng manual_rng = Rng(29).split(kClientRngStreamBase + 0);

  run_round_deer(state);
  run_round_deer(state);

  LoraModel manual = initial;
  const std::vector<std::size_t>& shard = state.plan.shards[0];
  for (int t = 0; t < 2; ++t) {
    local_train(manual, *state.train, shard, TrainableSelector::OnlyB, 1,
                cfg.training.batch_size, cfg.training.learning_rate, manual_rng);
    local_train(manual, *state.train, shard, TrainableSelector::OnlyA, 1,
                cfg.training.batch_size, cfg.training.learning_rate, manual_rng);
  }
  CHECK(bit_equal(state.global_model.layers[0].adapter->a, manual.layers[0].adapter->a));
  CHECK(bit_equal(state.global_model.layers[0].adapter->b, manual.layers[0].adapter->b));
}

TEST_CASE("budget pattern with only TrainB never updates the global A") {
  ExperimentConfig cfg = tiny_config("deer", 3, 4);
  cfg.pattern = {{std::vector<std::string>{"TrainB"}}};
  FederationState state = make_federation(cfg, 31);
  const Matrix a_init = state.global_model.layers[0].adapter->a;
  for (int t = 0; t < 4; ++t) run_round_deer(state);
  CHECK(bit_equal(state.global_model.layers[0].adapter->a, a_init));
  CHECK(state.events.size() == 4);
}

TEST_CASE("75% budget preset alternates full and half rounds") {
  const RoundSchedule schedule = RoundSchedule::budget_preset("75%");
  CHECK(schedule.phases_for_round(0).size() == 2);
  CHECK(schedule.phases_for_round(1).size() == 1);
  CHECK(schedule.phases_for_round(2).size() == 2);  // cycles
  CHECK_THROWS_AS(RoundSchedule::budget_preset("42%"), std::invalid_argument);
  CHECK_THROWS_AS(RoundSchedule::alternating_budget({}), std::invalid_argument);
}

TEST_CASE("schedule variant preconditions") {
  ExperimentConfig cfg = tiny_config("deer", 2, 1);
  FederationState state = make_federation(cfg, 37);
  CHECK_THROWS_AS(run_round_joint(state), std::invalid_argument);
  CHECK_THROWS_AS(run_round_ffa(state), std::invalid_argument);
}

TEST_CASE("zero rounds yields only the round-0 evaluation") {
  const RunResult result = run_federation(tiny_config("deer", 2, 0), 41);
  REQUIRE(result.metrics.size() == 1);
  CHECK(result.metrics[0].round == 0);
  CHECK(result.metrics[0].accuracy >= 0.0);
  CHECK(result.events.empty());
}

TEST_CASE("run_federation is deterministic") {
  ExperimentConfig cfg = tiny_config("deer", 3, 3);
  cfg.privacy.enabled = true;
  cfg.privacy.epsilon = 1.0;
  cfg.privacy.clip = 0.1;
  const RunResult r1 = run_federation(cfg, 43);
  const RunResult r2 = run_federation(cfg, 43);
  REQUIRE(r1.metrics.size() == r2.metrics.size());
  for (std::size_t i = 0; i < r1.metrics.size(); ++i) {
    CHECK(r1.metrics[i].accuracy == r2.metrics[i].accuracy);
    CHECK(r1.metrics[i].macro_f1 == r2.metrics[i].macro_f1);
    CHECK(r1.metrics[i].deviation_norm == r2.metrics[i].deviation_norm);
    CHECK(r1.metrics[i].mean_norm_linear_b == r2.metrics[i].mean_norm_linear_b);
    CHECK(r1.metrics[i].epsilon_spent == r2.metrics[i].epsilon_spent);
  }
  CHECK(r1.trace.size() == r2.trace.size());
  CHECK(r1.metrics.back().epsilon_spent <= cfg.privacy.epsilon + 1e-9);
}

TEST_CASE("alternating beats joint on a heterogeneous toy") {
  ExperimentConfig cfg = tiny_config("joint-lora", 6, 25);
  cfg.data.beta = 0.1;
  cfg.data.min_shard = 4;
  const double joint_acc = run_federation(cfg, 47).metrics.back().accuracy;
  cfg.method = "deer";
  const double deer_acc = run_federation(cfg, 47).metrics.back().accuracy;
  CHECK(deer_acc >= joint_acc);
}

TEST_CASE("checkpoint round trip resumes bit-exactly") {
  ExperimentConfig cfg = tiny_config("deer", 3, 4);
  FederationState straight = make_federation(cfg, 53);
  run_round(straight);
  run_round(straight);
  const nlohmann::json snapshot = checkpoint_to_json(straight);
  run_round(straight);
  run_round(straight);

  FederationState resumed = make_federation(cfg, 53);
  restore_checkpoint(resumed, snapshot);
  CHECK(resumed.round == 2);
  run_round(resumed);
  run_round(resumed);

  CHECK(bit_equal(resumed.global_model.layers[0].adapter->a,
                  straight.global_model.layers[0].adapter->a));
  CHECK(bit_equal(resumed.global_model.layers[0].adapter->b,
                  straight.global_model.layers[0].adapter->b));
  CHECK(resumed.client_rngs[0].position() == straight.client_rngs[0].position());
  CHECK(resumed.round == straight.round);
}
