#include "fedlora/harness.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fedlora {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_epsilon(double e) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", e);
  return buf;
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << contents;
  out.flush();
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string metrics_to_csv(std::uint64_t seed, const std::vector<RoundMetrics>& rows) {
  std::ostringstream os;
  os << "seed,round,accuracy,macro_f1,deviation_norm,mean_norm_linear_b,"
        "mean_norm_linear_a,epsilon_spent\n";
  for (const auto& r : rows) {
    os << seed << ',' << r.round << ',' << format_double(r.accuracy) << ','
       << format_double(r.macro_f1) << ',' << format_double(r.deviation_norm) << ','
       << format_double(r.mean_norm_linear_b) << ','
       << format_double(r.mean_norm_linear_a) << ','
       << format_double(r.epsilon_spent) << '\n';
  }
  return os.str();
}

std::string trace_to_csv(const std::vector<NoiseTraceRow>& rows) {
  std::ostringstream os;
  os << "round,layer,norm_linear_b,norm_linear_a,norm_base\n";
  for (const auto& r : rows) {
    os << r.round << ',' << r.layer << ',' << format_double(r.norm_linear_b) << ','
       << format_double(r.norm_linear_a) << ',' << format_double(r.norm_base) << '\n';
  }
  return os.str();
}

json mean_std_json(const std::vector<double>& values) {
  return json{{"mean", mean(values)}, {"std", sample_std(values)}};
}

double select_clip_by_validation(const ExperimentConfig& cfg) {
  ExperimentConfig probe = cfg;
  probe.privacy.clip_auto = false;
  double best_clip = cfg.privacy.clip_grid.front();
  double best_acc = -1.0;
  for (double c : cfg.privacy.clip_grid) {
    probe.privacy.clip = c;
    RunResult result = run_federation(probe, cfg.seeds.front());
    if (result.state.val->size() == 0) {
      throw std::runtime_error("privacy.clip = auto requires a non-empty validation split");
    }
    const double val_acc = evaluate(result.state.global_model, *result.state.val).accuracy;
    if (val_acc > best_acc) {
      best_acc = val_acc;
      best_clip = c;
    }
  }
  return best_clip;
}

ExperimentConfig config_for(const ExperimentConfig& base, const std::string& method,
                            double epsilon_or_zero, double beta,
                            const std::string& out_dir) {
  ExperimentConfig cfg = base;
  cfg.method = method;
  cfg.methods.clear();
  cfg.epsilons.clear();
  cfg.betas.clear();
  if (method != "deer") cfg.pattern.reset();
  if (epsilon_or_zero > 0.0) {
    cfg.privacy.enabled = true;
    cfg.privacy.epsilon = epsilon_or_zero;
  } else {
    cfg.privacy.enabled = false;
  }
  cfg.data.beta = beta;
  cfg.output_dir = out_dir;
  return cfg;
}

std::vector<double> budget_list(const ExperimentConfig& cfg) {
  if (!cfg.epsilons.empty()) return cfg.epsilons;
  return {cfg.privacy.enabled ? cfg.privacy.epsilon : 0.0};
}

std::string budget_label(double epsilon_or_zero) {
  return epsilon_or_zero > 0.0 ? format_epsilon(epsilon_or_zero) : "off";
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  if (cfg.method.empty()) {
    throw std::invalid_argument("run_experiment: config has no method");
  }
  RunArtifacts artifacts;
  artifacts.directory = cfg.output_dir;
  fs::create_directories(cfg.output_dir);

  ExperimentConfig effective = cfg;
  if (cfg.privacy.enabled && cfg.privacy.clip_auto) {
    effective.privacy.clip = select_clip_by_validation(cfg);
    effective.privacy.clip_auto = false;
  }
  artifacts.chosen_clip = effective.privacy.clip;

  artifacts.config_file = (fs::path(cfg.output_dir) / "config.json").string();
  write_file(artifacts.config_file, serialize_config(cfg) + "\n");

  std::vector<double> final_acc, final_f1, final_dev, final_lb, final_la, final_eps;
  for (std::uint64_t seed : cfg.seeds) {
    RunResult result = run_federation(effective, seed);
    const std::string metrics_path =
        (fs::path(cfg.output_dir) / ("metrics_seed" + std::to_string(seed) + ".csv"))
            .string();
    write_file(metrics_path, metrics_to_csv(seed, result.metrics));
    artifacts.metric_files.push_back(metrics_path);
    if (effective.privacy.enabled) {
      const std::string trace_path =
          (fs::path(cfg.output_dir) /
           ("noise_trace_seed" + std::to_string(seed) + ".csv"))
              .string();
      write_file(trace_path, trace_to_csv(result.trace));
      artifacts.trace_files.push_back(trace_path);
    }
    const RoundMetrics& last = result.metrics.back();
    final_acc.push_back(last.accuracy);
    final_f1.push_back(last.macro_f1);
    final_dev.push_back(last.deviation_norm);
    final_lb.push_back(last.mean_norm_linear_b);
    final_la.push_back(last.mean_norm_linear_a);
    final_eps.push_back(last.epsilon_spent);
    artifacts.outcomes.push_back({seed, std::move(result.metrics)});
  }

  json summary;
  summary["schema_version"] = kConfigSchemaVersion;
  summary["tool_version"] = kToolVersion;
  summary["rng_algorithm"] = Rng::kAlgorithm;
  summary["method"] = cfg.method;
  summary["seeds"] = cfg.seeds;
  summary["rounds"] = cfg.training.rounds;
  summary["privacy"] = {
      {"enabled", effective.privacy.enabled},
      {"epsilon", effective.privacy.epsilon},
      {"delta", effective.privacy.delta_or_default(cfg.data.clients)},
      {"clip", effective.privacy.clip},
      {"clip_auto", cfg.privacy.clip_auto},
      {"sigma", effective.privacy.enabled
                    ? calibrate_sigma(effective.privacy.epsilon,
                                      effective.privacy.delta_or_default(cfg.data.clients),
                                      std::max(cfg.training.rounds, 1),
                                      cfg.data.clients)
                    : 0.0}};
  summary["final_metrics"] = {{"accuracy", mean_std_json(final_acc)},
                              {"macro_f1", mean_std_json(final_f1)},
                              {"deviation_norm", mean_std_json(final_dev)},
                              {"mean_norm_linear_b", mean_std_json(final_lb)},
                              {"mean_norm_linear_a", mean_std_json(final_la)},
                              {"epsilon_spent", mean_std_json(final_eps)}};
  summary["files"] = {{"metrics", artifacts.metric_files},
                      {"noise_traces", artifacts.trace_files}};
  summary["config"] = json::parse(serialize_config(cfg));

  artifacts.summary_file = (fs::path(cfg.output_dir) / "summary.json").string();
  write_file(artifacts.summary_file, summary.dump(2) + "\n");
  return artifacts;
}

ComparisonResult compare_methods(const ExperimentConfig& cfg) {
  std::vector<std::string> methods = cfg.methods;
  if (methods.empty() && !cfg.method.empty()) methods = {cfg.method};
  if (methods.empty()) {
    throw std::invalid_argument("compare_methods: config lists no methods");
  }

  const std::vector<double> budgets = budget_list(cfg);
  ComparisonResult result;

  std::ostringstream curves;
  curves << "method,budget,seed,round,accuracy,macro_f1\n";

  for (double budget : budgets) {
    for (const auto& method : methods) {
      const std::string label = budget_label(budget);
      const std::string sub_dir =
          (fs::path(cfg.output_dir) / (method + "_eps" + label)).string();
      const ExperimentConfig sub =
          config_for(cfg, method, budget, cfg.data.beta, sub_dir);
      RunArtifacts artifacts = run_experiment(sub);

      std::vector<double> acc, f1;
      for (const auto& outcome : artifacts.outcomes) {
        acc.push_back(outcome.metrics.back().accuracy);
        f1.push_back(outcome.metrics.back().macro_f1);
        for (const auto& row : outcome.metrics) {
          curves << method << ',' << label << ',' << outcome.seed << ',' << row.round
                 << ',' << format_double(row.accuracy) << ','
                 << format_double(row.macro_f1) << '\n';
        }
      }
      result.rows.push_back({method, label, mean(acc), sample_std(acc), mean(f1),
                             sample_std(f1)});
    }
  }

  std::ostringstream csv;
  csv << "method,budget,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std\n";
  for (const auto& row : result.rows) {
    csv << row.method << ',' << row.budget << ',' << format_double(row.accuracy_mean)
        << ',' << format_double(row.accuracy_std) << ','
        << format_double(row.macro_f1_mean) << ',' << format_double(row.macro_f1_std)
        << '\n';
  }

  std::ostringstream txt;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s %-8s %-20s %-20s\n", "method", "budget",
                "accuracy", "macro_f1");
  txt << line;
  for (const auto& row : result.rows) {
    char acc[32], f1[32];
    std::snprintf(acc, sizeof(acc), "%.4f +- %.4f", row.accuracy_mean, row.accuracy_std);
    std::snprintf(f1, sizeof(f1), "%.4f +- %.4f", row.macro_f1_mean, row.macro_f1_std);
    std::snprintf(line, sizeof(line), "%-12s %-8s %-20s %-20s\n", row.method.c_str(),
                  row.budget.c_str(), acc, f1);
    txt << line;
  }

  fs::create_directories(cfg.output_dir);
  result.table_csv = (fs::path(cfg.output_dir) / "comparison.csv").string();
  result.table_txt = (fs::path(cfg.output_dir) / "comparison.txt").string();
  result.curves_csv = (fs::path(cfg.output_dir) / "curves.csv").string();
  write_file(result.table_csv, csv.str());
  write_file(result.table_txt, txt.str());
  write_file(result.curves_csv, curves.str());
  return result;
}

ComparisonResult compare_methods(const std::vector<ExperimentConfig>& configs) {
  if (configs.empty()) {
    throw std::invalid_argument("compare_methods: no configs");
  }
  auto shared_view = [](const ExperimentConfig& c) {
    ExperimentConfig v = c;
    v.method = "joint-lora";  // normalize the method-specific fields away
    v.methods.clear();
    v.pattern.reset();
    return serialize_config(v);
  };
  const std::string reference = shared_view(configs.front());
  for (const auto& c : configs) {
    if (shared_view(c) != reference) {
      throw std::invalid_argument(
          "compare_methods: configs differ outside the method fields");
    }
  }
  ExperimentConfig merged = configs.front();
  merged.methods.clear();
  for (const auto& c : configs) {
    if (c.method.empty()) {
      throw std::invalid_argument("compare_methods: config without method");
    }
    merged.methods.push_back(c.method);
    if (c.pattern) merged.pattern = c.pattern;
  }
  merged.method.clear();
  return compare_methods(merged);
}

SweepResult sweep(const ExperimentConfig& cfg) {
  std::vector<std::string> methods = cfg.methods;
  if (methods.empty() && !cfg.method.empty()) methods = {cfg.method};
  if (methods.empty()) throw std::invalid_argument("sweep: config lists no methods");
  const std::vector<double> budgets = budget_list(cfg);
  const std::vector<double> betas = cfg.betas.empty()
                                        ? std::vector<double>{cfg.data.beta}
                                        : cfg.betas;

  std::ostringstream csv;
  csv << "method,budget,beta,seed,final_accuracy,final_macro_f1,final_deviation_norm\n";
  int runs = 0;
  for (const auto& method : methods) {
    for (double budget : budgets) {
      for (double beta : betas) {
        const std::string label = budget_label(budget);
        const std::string sub_dir =
            (fs::path(cfg.output_dir) /
             (method + "_eps" + label + "_beta" + format_epsilon(beta)))
                .string();
        const ExperimentConfig sub = config_for(cfg, method, budget, beta, sub_dir);
        RunArtifacts artifacts = run_experiment(sub);
        ++runs;
        for (const auto& outcome : artifacts.outcomes) {
          const RoundMetrics& last = outcome.metrics.back();
          csv << method << ',' << label << ',' << format_epsilon(beta) << ','
              << outcome.seed << ',' << format_double(last.accuracy) << ','
              << format_double(last.macro_f1) << ','
              << format_double(last.deviation_norm) << '\n';
        }
      }
    }
  }

  fs::create_directories(cfg.output_dir);
  SweepResult result;
  result.results_csv = (fs::path(cfg.output_dir) / "sweep_results.csv").string();
  result.runs = runs;
  write_file(result.results_csv, csv.str());
  return result;
}

std::vector<TraceSeries> emit_noise_trace_plotdata(const std::string& trace_csv,
                                                   const std::string& out_dir,
                                                   const std::string& method_label,
                                                   const std::string& epsilon_label) {
  std::ifstream in(trace_csv);
  if (!in) throw std::runtime_error("cannot open trace file: " + trace_csv);
  std::string line;
  if (!std::getline(in, line)) {
    throw std::runtime_error("trace file is empty: " + trace_csv);
  }
  // Tolerate a trailing \r from CRLF files.
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "round,layer,norm_linear_b,norm_linear_a,norm_base") {
    throw std::runtime_error("unexpected trace header at line 1 of " + trace_csv);
  }

  // round -> (sum linear_b, sum linear_a, count)
  std::map<int, std::array<double, 3>> per_round;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::array<double, 5> fields{};
    std::stringstream ss(line);
    std::string cell;
    std::size_t i = 0;
    bool ok = true;
    while (std::getline(ss, cell, ',')) {
      if (i >= fields.size()) {
        ok = false;
        break;
      }
      try {
        std::size_t pos = 0;
        fields[i] = std::stod(cell, &pos);
        if (pos != cell.size()) ok = false;
      } catch (const std::exception&) {
        ok = false;
      }
      ++i;
    }
    if (!ok || i != fields.size()) {
      throw std::runtime_error("malformed trace row at line " + std::to_string(lineno) +
                               " of " + trace_csv);
    }
    auto& acc = per_round[static_cast<int>(fields[0])];
    acc[0] += fields[2];
    acc[1] += fields[3];
    acc[2] += 1.0;
  }

  fs::create_directories(out_dir);
  std::vector<TraceSeries> out;
  const std::array<std::pair<const char*, int>, 2> terms = {
      std::make_pair("linear_b", 0), std::make_pair("linear_a", 1)};
  for (const auto& [term, idx] : terms) {
    std::vector<double> rounds, norms;
    std::ostringstream os;
    os << "round,norm\n";
    for (const auto& [round, acc] : per_round) {
      const double value = acc[idx] / acc[2];
      rounds.push_back(static_cast<double>(round));
      norms.push_back(value);
      os << round << ',' << format_double(value) << '\n';
    }
    TraceSeries series;
    series.term = term;
    if (rounds.size() >= 2) {
      series.slope = fitted_slope(rounds, norms);
      series.slope_defined = true;
      os << "# fitted_slope=" << format_double(series.slope) << '\n';
    } else {
      os << "# fitted_slope=undefined\n";
    }
    series.file = (fs::path(out_dir) / (method_label + "_eps" + epsilon_label + "_" +
                                        term + ".csv"))
                      .string();
    write_file(series.file, os.str());
    out.push_back(std::move(series));
  }
  return out;
}

std::vector<RoundMetrics> read_metrics_csv(const std::string& path,
                                           std::uint64_t* seed_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty metrics file: " + path);
  std::vector<RoundMetrics> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> fields;
    while (std::getline(ss, cell, ',')) {
      try {
        fields.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error("malformed metrics row at line " +
                                 std::to_string(lineno) + " of " + path);
      }
    }
    if (fields.size() != 8) {
      throw std::runtime_error("malformed metrics row at line " +
                               std::to_string(lineno) + " of " + path);
    }
    if (seed_out) *seed_out = static_cast<std::uint64_t>(fields[0]);
    RoundMetrics r;
    r.round = static_cast<int>(fields[1]);
    r.accuracy = fields[2];
    r.macro_f1 = fields[3];
    r.deviation_norm = fields[4];
    r.mean_norm_linear_b = fields[5];
    r.mean_norm_linear_a = fields[6];
    r.epsilon_spent = fields[7];
    rows.push_back(r);
  }
  return rows;
}

}  // namespace fedlora
