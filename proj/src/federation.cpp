#include "fedlora/federation.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace fedlora {

using nlohmann::json;

namespace {

TrainableSelector selector_for(Phase p) {
  switch (p) {
    case Phase::TrainB: return TrainableSelector::OnlyB;
    case Phase::TrainA: return TrainableSelector::OnlyA;
    case Phase::TrainBoth: return TrainableSelector::Both;
  }
  throw std::logic_error("selector_for: bad phase");
}

Phase phase_from_name(const std::string& name) {
  if (name == "TrainB") return Phase::TrainB;
  if (name == "TrainA") return Phase::TrainA;
  if (name == "TrainBoth") return Phase::TrainBoth;
  throw std::invalid_argument("unknown phase '" + name + "'");
}

/// Copy the global adapters onto every client (the distribution step).
void distribute(FederationState& s) {
  for (auto& client : s.clients) {
    for (std::size_t li : s.adapted_layers) {
      client.layers[li].adapter = s.global_model.layers[li].adapter;
    }
  }
}

struct TraceAccumulator {
  double sum_linear_b = 0.0;
  double sum_linear_a = 0.0;
  double sum_base = 0.0;
  int n_linear_b = 0;
  int n_linear_a = 0;
  int n_base = 0;
};

void run_phase(FederationState& s, Phase phase, int round_number,
               std::map<std::size_t, TraceAccumulator>& acc) {
  distribute(s);
  const TrainableSelector selector = selector_for(phase);
  for (std::size_t k = 0; k < s.clients.size(); ++k) {
    local_train(s.clients[k], *s.train, s.plan.shards[k], selector,
                s.local_epochs, s.batch_size, s.learning_rate, s.client_rngs[k]);
  }

  const bool dp = s.privacy.enabled;
  const bool upload_b = phase != Phase::TrainA;
  const bool upload_a = phase != Phase::TrainB;
  // Single-factor phases of the alternating schedules carry pinv-regulated
  // noise; TrainBoth (and the freeze-A baseline) add plain factor noise.
  const bool regulated =
      (s.schedule.variant == ScheduleVariant::Alternating ||
       s.schedule.variant == ScheduleVariant::AlternatingBudget) &&
      phase != Phase::TrainBoth;

  double event_dev = 0.0;
  double event_dev_pre = 0.0;
  std::map<std::size_t, std::pair<Matrix, Matrix>> aggregated;  // layer -> (B, A)

  for (std::size_t li : s.adapted_layers) {
    const LoraAdapter& g = *s.global_model.layers[li].adapter;
    std::vector<Matrix> b_uploads, a_uploads, b_prenoise, a_prenoise;
    b_uploads.reserve(s.clients.size());
    a_uploads.reserve(s.clients.size());

    for (std::size_t k = 0; k < s.clients.size(); ++k) {
      LoraAdapter& local = *s.clients[k].layers[li].adapter;
      Matrix b_send = local.b;
      Matrix a_send = local.a;
      if (dp && upload_b) {
        const Matrix delta = clip_update(local.b - g.b, s.privacy.clip);
        Matrix xi_b;
        if (regulated) {
          const Matrix xi_w = mechanism_noise(local.b.rows(), local.a.cols(),
                                              s.privacy, s.client_rngs[k]);
          xi_b = regulate_for_b(xi_w, local.a);  // local.a is the frozen A_g
          acc[li].sum_base += frobenius_norm(xi_w);
          acc[li].n_base += 1;
        } else {
          xi_b = mechanism_noise(local.b.rows(), local.b.cols(), s.privacy,
                                 s.client_rngs[k]);
        }
        acc[li].sum_linear_b += frobenius_norm(matmul(xi_b, local.a));
        acc[li].n_linear_b += 1;
        b_send = g.b + delta + xi_b;
      }
      if (dp && upload_a) {
        const Matrix delta = clip_update(local.a - g.a, s.privacy.clip);
        Matrix xi_a;
        if (regulated) {
          const Matrix xi_w = mechanism_noise(local.b.rows(), local.a.cols(),
                                              s.privacy, s.client_rngs[k]);
          xi_a = regulate_for_a(xi_w, local.b);  // local.b is the frozen B_g
          acc[li].sum_base += frobenius_norm(xi_w);
          acc[li].n_base += 1;
        } else {
          xi_a = mechanism_noise(local.a.rows(), local.a.cols(), s.privacy,
                                 s.client_rngs[k]);
        }
        acc[li].sum_linear_a += frobenius_norm(matmul(local.b, xi_a));
        acc[li].n_linear_a += 1;
        a_send = g.a + delta + xi_a;
      }
      b_uploads.push_back(upload_b ? std::move(b_send) : local.b);
      a_uploads.push_back(upload_a ? std::move(a_send) : local.a);
      b_prenoise.push_back(local.b);
      a_prenoise.push_back(local.a);
    }

    // Deviation over what the server actually aggregates (uploads), with the
    // non-uploaded factor at its synchronized value.
    const DeviationResult dev =
        aggregation_deviation(b_uploads, a_uploads, g.alpha, g.rank);
    const DeviationResult dev_pre =
        dp ? aggregation_deviation(b_prenoise, a_prenoise, g.alpha, g.rank) : dev;
    event_dev = std::max(event_dev, dev.norm);
    event_dev_pre = std::max(event_dev_pre, dev_pre.norm);

    aggregated.emplace(li, std::make_pair(upload_b ? aggregate(b_uploads) : g.b,
                                          upload_a ? aggregate(a_uploads) : g.a));
  }

  for (std::size_t li : s.adapted_layers) {
    LoraAdapter& g = *s.global_model.layers[li].adapter;
    g.b = std::move(aggregated.at(li).first);
    g.a = std::move(aggregated.at(li).second);
  }
  distribute(s);  // clients leave the barrier bit-identical to the global

  s.events.push_back({round_number, phase, event_dev, event_dev_pre});
}

}  // namespace

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::TrainB: return "TrainB";
    case Phase::TrainA: return "TrainA";
    case Phase::TrainBoth: return "TrainBoth";
  }
  return "?";
}

RoundSchedule RoundSchedule::joint() {
  return {ScheduleVariant::Joint, {{Phase::TrainBoth}}};
}

RoundSchedule RoundSchedule::freeze_a() {
  return {ScheduleVariant::FreezeA, {{Phase::TrainB}}};
}

RoundSchedule RoundSchedule::alternating() {
  return {ScheduleVariant::Alternating, {{Phase::TrainB, Phase::TrainA}}};
}

RoundSchedule RoundSchedule::alternating_budget(
    std::vector<std::vector<Phase>> pattern) {
  if (pattern.empty() ||
      std::any_of(pattern.begin(), pattern.end(),
                  [](const auto& round) { return round.empty(); })) {
    throw std::invalid_argument("RoundSchedule: pattern rounds must be non-empty");
  }
  return {ScheduleVariant::AlternatingBudget, std::move(pattern)};
}

RoundSchedule RoundSchedule::budget_preset(const std::string& name) {
  if (name == "100%") return alternating();
  if (name == "75%") {
    return alternating_budget({{Phase::TrainB, Phase::TrainA}, {Phase::TrainB}});
  }
  if (name == "50%") {
    return alternating_budget({{Phase::TrainB}, {Phase::TrainA}});
  }
  throw std::invalid_argument("RoundSchedule: unknown preset '" + name + "'");
}

const std::vector<Phase>& RoundSchedule::phases_for_round(int round) const {
  if (pattern.empty()) throw std::logic_error("RoundSchedule: empty pattern");
  return pattern[static_cast<std::size_t>(round) % pattern.size()];
}

Matrix aggregate(const std::vector<Matrix>& matrices) {
  if (matrices.empty()) throw std::invalid_argument("aggregate: empty list");
  Matrix sum = matrices.front();
  for (std::size_t k = 1; k < matrices.size(); ++k) {
    sum = sum + matrices[k];  // operator+ validates the shapes
  }
  return (1.0 / static_cast<double>(matrices.size())) * sum;
}

DeviationResult aggregation_deviation(const std::vector<Matrix>& bs,
                                      const std::vector<Matrix>& as,
                                      double alpha, std::size_t rank) {
  if (bs.empty() || bs.size() != as.size()) {
    throw std::invalid_argument(
        "aggregation_deviation: factor lists must be non-empty and equal length");
  }
  if (rank == 0) throw std::invalid_argument("aggregation_deviation: rank must be >= 1");
  const std::size_t clients = bs.size();
  for (std::size_t k = 0; k < clients; ++k) {
    if (bs[k].rows() != bs[0].rows() || bs[k].cols() != bs[0].cols() ||
        as[k].rows() != as[0].rows() || as[k].cols() != as[0].cols() ||
        bs[k].cols() != as[k].rows()) {
      throw std::invalid_argument("aggregation_deviation: factor shape mismatch");
    }
  }

  bool all_b_equal = true;
  bool all_a_equal = true;
  for (std::size_t k = 1; k < clients; ++k) {
    all_b_equal = all_b_equal && bit_equal(bs[k], bs[0]);
    all_a_equal = all_a_equal && bit_equal(as[k], as[0]);
  }

  // Pairwise-difference expansion of Eq.-style deviation: the differences of
  // bit-identical factors vanish exactly, so the shared-factor case is an
  // exact zero rather than a rounding residue.
  Matrix sum(bs[0].rows(), as[0].cols());
  if (all_a_equal && !all_b_equal) {
    for (std::size_t k = 0; k < clients; ++k) {
      for (std::size_t kp = 0; kp < clients; ++kp) {
        if (kp == k) continue;
        sum = sum + matmul(bs[k], as[kp] - as[k]);
      }
    }
  } else {
    for (std::size_t kp = 0; kp < clients; ++kp) {
      for (std::size_t k = 0; k < clients; ++k) {
        if (kp == k) continue;
        sum = sum + matmul(bs[kp] - bs[k], as[k]);
      }
    }
  }

  const double scale = alpha / static_cast<double>(rank) /
                       static_cast<double>(clients * clients);
  DeviationResult out;
  out.o = entrywise_abs(scale * sum);
  out.norm = frobenius_norm(out.o);
  return out;
}

FederationState make_federation(const ExperimentConfig& cfg, std::uint64_t seed) {
  FederationState state;

  Rng master(seed);
  const std::uint64_t data_seed = master.split(1).seed();
  const std::uint64_t partition_seed = master.split(2).seed();
  Rng pretrain_rng = master.split(3);
  Rng init_rng = master.split(4);
  state.server_rng = master.split(5);

  Dataset pretrain;
  if (cfg.data.source == DataSource::Synthetic) {
    const auto& syn = cfg.data.synthetic;
    pretrain = make_synthetic_split(syn.classes, syn.dim, syn.pretrain_samples,
                                    syn.class_sep, data_seed, Split::Pretrain);
    state.train = std::make_shared<Dataset>(make_synthetic_split(
        syn.classes, syn.dim, syn.train_samples, syn.class_sep, data_seed,
        Split::Train));
    state.val = std::make_shared<Dataset>(
        syn.val_samples > 0
            ? make_synthetic_split(syn.classes, syn.dim, syn.val_samples,
                                   syn.class_sep, data_seed, Split::Val)
            : Dataset{Matrix(0, syn.dim), {}, syn.classes, Split::Val});
    state.test = std::make_shared<Dataset>(make_synthetic_split(
        syn.classes, syn.dim, syn.test_samples, syn.class_sep, data_seed,
        Split::Test));
  } else {
    DatasetSplits splits = load_csv(cfg.data.csv.path, cfg.data.csv.label_column,
                                    cfg.data.csv.fractions, data_seed);
    state.train = std::make_shared<Dataset>(std::move(splits.train));
    state.val = std::make_shared<Dataset>(std::move(splits.val));
    state.test = std::make_shared<Dataset>(std::move(splits.test));
    pretrain = *state.train;  // csv has no dedicated pretrain split
    pretrain.split = Split::Pretrain;
  }

  state.plan = dirichlet_partition(
      state.train->y, cfg.data.clients, cfg.data.beta, partition_seed,
      cfg.data.min_shard_or_default(cfg.training.batch_size));

  LoraModel base = make_model(cfg.model.architecture, state.train->dim(),
                              state.train->classes, cfg.model.hidden_dim);
  if (cfg.training.pretrain_epochs > 0) {
    pretrain_dense(base, pretrain, cfg.training.pretrain_epochs,
                   cfg.training.batch_size, cfg.training.pretrain_learning_rate,
                   pretrain_rng);
  }

  state.adapted_layers = cfg.model.adapted_layers();
  state.global_model = std::move(base);
  for (std::size_t li : state.adapted_layers) {
    attach_adapter(state.global_model, li, cfg.model.rank, cfg.model.alpha,
                   cfg.model.init_std, init_rng);
  }
  state.clients.assign(cfg.data.clients, state.global_model);

  for (int k = 0; k < cfg.data.clients; ++k) {
    state.client_rngs.push_back(master.split(kClientRngStreamBase + k));
  }

  if (cfg.privacy.enabled) {
    state.privacy = PrivacySpec::calibrated(
        cfg.privacy.epsilon, cfg.privacy.delta_or_default(cfg.data.clients),
        cfg.privacy.clip, cfg.data.clients, std::max(cfg.training.rounds, 1));
  } else {
    state.privacy = PrivacySpec::disabled();
  }

  if (cfg.method == "joint-lora") {
    state.schedule = RoundSchedule::joint();
  } else if (cfg.method == "ffa-lora") {
    state.schedule = RoundSchedule::freeze_a();
  } else if (cfg.method == "deer") {
    if (cfg.pattern) {
      std::vector<std::vector<Phase>> pattern;
      for (const auto& round : *cfg.pattern) {
        std::vector<Phase> phases;
        for (const auto& p : round) phases.push_back(phase_from_name(p));
        pattern.push_back(std::move(phases));
      }
      const std::vector<std::vector<Phase>> full = {{Phase::TrainB, Phase::TrainA}};
      state.schedule = pattern == full ? RoundSchedule::alternating()
                                       : RoundSchedule::alternating_budget(pattern);
    } else {
      state.schedule = RoundSchedule::alternating();
    }
  } else {
    throw std::invalid_argument("make_federation: unknown method '" + cfg.method + "'");
  }

  state.local_epochs = cfg.training.local_epochs;
  state.batch_size = cfg.training.batch_size;
  state.learning_rate = cfg.training.learning_rate;
  return state;
}

void run_round(FederationState& state) {
  const auto& phases = state.schedule.phases_for_round(state.round);
  const int round_number = state.round + 1;
  std::map<std::size_t, TraceAccumulator> acc;
  for (Phase p : phases) run_phase(state, p, round_number, acc);
  if (state.privacy.enabled) {
    for (const auto& [layer, a] : acc) {
      NoiseTraceRow row;
      row.round = round_number;
      row.layer = static_cast<int>(layer);
      row.norm_linear_b = a.n_linear_b > 0 ? a.sum_linear_b / a.n_linear_b : 0.0;
      row.norm_linear_a = a.n_linear_a > 0 ? a.sum_linear_a / a.n_linear_a : 0.0;
      row.norm_base = a.n_base > 0 ? a.sum_base / a.n_base : 0.0;
      state.trace.push_back(row);
    }
  }
  state.round = round_number;
}

void run_round_joint(FederationState& state) {
  if (state.schedule.variant != ScheduleVariant::Joint) {
    throw std::invalid_argument("run_round_joint: schedule is not Joint");
  }
  run_round(state);
}

void run_round_ffa(FederationState& state) {
  if (state.schedule.variant != ScheduleVariant::FreezeA) {
    throw std::invalid_argument("run_round_ffa: schedule is not FreezeA");
  }
  run_round(state);
}

void run_round_deer(FederationState& state) {
  if (state.schedule.variant != ScheduleVariant::Alternating &&
      state.schedule.variant != ScheduleVariant::AlternatingBudget) {
    throw std::invalid_argument("run_round_deer: schedule is not alternating");
  }
  run_round(state);
}

RunResult run_federation(const ExperimentConfig& cfg, std::uint64_t seed) {
  FederationState state = make_federation(cfg, seed);
  RunResult result;

  const Evaluation ev0 = evaluate(state.global_model, *state.test);
  result.metrics.push_back({0, ev0.accuracy, ev0.macro_f1, 0.0, 0.0, 0.0, 0.0});

  for (int t = 1; t <= cfg.training.rounds; ++t) {
    const std::size_t events_before = state.events.size();
    const std::size_t trace_before = state.trace.size();
    run_round(state);

    RoundMetrics row;
    row.round = t;
    const Evaluation ev = evaluate(state.global_model, *state.test);
    row.accuracy = ev.accuracy;
    row.macro_f1 = ev.macro_f1;
    for (std::size_t i = events_before; i < state.events.size(); ++i) {
      row.deviation_norm = std::max(row.deviation_norm, state.events[i].deviation_norm);
    }
    int rows = 0;
    for (std::size_t i = trace_before; i < state.trace.size(); ++i) {
      row.mean_norm_linear_b += state.trace[i].norm_linear_b;
      row.mean_norm_linear_a += state.trace[i].norm_linear_a;
      ++rows;
    }
    if (rows > 0) {
      row.mean_norm_linear_b /= rows;
      row.mean_norm_linear_a /= rows;
    }
    row.epsilon_spent =
        state.privacy.enabled
            ? epsilon_of(state.privacy.sigma, state.privacy.delta, t,
                         state.privacy.clients)
            : 0.0;
    result.metrics.push_back(row);
  }

  result.trace = state.trace;
  result.events = state.events;
  result.state = std::move(state);
  return result;
}

namespace {

json adapter_to_json(const LoraAdapter& adapter) {
  return json{{"m", adapter.b.rows()},
              {"n", adapter.a.cols()},
              {"r", adapter.rank},
              {"alpha", adapter.alpha},
              {"a", std::vector<double>(adapter.a.data().begin(), adapter.a.data().end())},
              {"b", std::vector<double>(adapter.b.data().begin(), adapter.b.data().end())}};
}

LoraAdapter adapter_from_json(const json& j) {
  LoraAdapter adapter;
  const std::size_t m = j.at("m").get<std::size_t>();
  const std::size_t n = j.at("n").get<std::size_t>();
  adapter.rank = j.at("r").get<std::size_t>();
  adapter.alpha = j.at("alpha").get<double>();
  adapter.a = Matrix(adapter.rank, n, j.at("a").get<std::vector<double>>());
  adapter.b = Matrix(m, adapter.rank, j.at("b").get<std::vector<double>>());
  return adapter;
}

json rng_to_json(const Rng& rng) {
  const auto st = rng.state();
  return json{{"seed", rng.seed()},
              {"state", std::vector<std::uint64_t>(st.begin(), st.end())},
              {"position", rng.position()}};
}

Rng rng_from_json(const json& j) {
  const auto v = j.at("state").get<std::vector<std::uint64_t>>();
  if (v.size() != 4) throw std::invalid_argument("checkpoint: bad rng state");
  return Rng::restore(j.at("seed").get<std::uint64_t>(), {v[0], v[1], v[2], v[3]},
                      j.at("position").get<std::uint64_t>());
}

}  // namespace

json checkpoint_to_json(const FederationState& state) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["round"] = state.round;
  j["adapted_layers"] = state.adapted_layers;
  json global;
  for (std::size_t li : state.adapted_layers) {
    global[std::to_string(li)] = adapter_to_json(*state.global_model.layers[li].adapter);
  }
  j["global"] = std::move(global);
  json clients = json::array();
  for (const auto& client : state.clients) {
    json c;
    for (std::size_t li : state.adapted_layers) {
      c[std::to_string(li)] = adapter_to_json(*client.layers[li].adapter);
    }
    clients.push_back(std::move(c));
  }
  j["clients"] = std::move(clients);
  j["rngs"] = {{"server", rng_to_json(state.server_rng)}, {"clients", json::array()}};
  for (const auto& rng : state.client_rngs) {
    j["rngs"]["clients"].push_back(rng_to_json(rng));
  }
  return j;
}

void restore_checkpoint(FederationState& state, const json& snapshot) {
  const auto layers = snapshot.at("adapted_layers").get<std::vector<std::size_t>>();
  if (layers != state.adapted_layers) {
    throw std::invalid_argument("checkpoint: adapted layer set mismatch");
  }
  if (snapshot.at("clients").size() != state.clients.size()) {
    throw std::invalid_argument("checkpoint: client count mismatch");
  }
  state.round = snapshot.at("round").get<int>();
  for (std::size_t li : state.adapted_layers) {
    state.global_model.layers[li].adapter =
        adapter_from_json(snapshot.at("global").at(std::to_string(li)));
  }
  for (std::size_t k = 0; k < state.clients.size(); ++k) {
    for (std::size_t li : state.adapted_layers) {
      state.clients[k].layers[li].adapter =
          adapter_from_json(snapshot.at("clients")[k].at(std::to_string(li)));
    }
  }
  state.server_rng = rng_from_json(snapshot.at("rngs").at("server"));
  const auto& client_rngs = snapshot.at("rngs").at("clients");
  if (client_rngs.size() != state.client_rngs.size()) {
    throw std::invalid_argument("checkpoint: rng count mismatch");
  }
  for (std::size_t k = 0; k < state.client_rngs.size(); ++k) {
    state.client_rngs[k] = rng_from_json(client_rngs[k]);
  }
}

}  // namespace fedlora
