#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fedlora/config.hpp"
#include "fedlora/harness.hpp"

namespace {

using nlohmann::json;

constexpr int kExitConfigError = 2;
constexpr int kExitIoError = 3;
constexpr int kExitRuntimeError = 4;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Apply a dotted-path override (e.g. training.rounds=10) onto the config
// JSON. Values parse as JSON when possible, falling back to a raw string.
void apply_override(json& root, const std::string& assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::runtime_error("override must look like key.path=value: " + assignment);
  }
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }

  json* node = &root;
  std::stringstream ss(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) {
    if (key.empty()) throw std::runtime_error("bad override path: " + path);
    keys.push_back(key);
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    node = &(*node)[keys[i]];
  }
  (*node)[keys.back()] = std::move(value);
}

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string method;
  int rounds = -1;
  std::string seeds;
  std::string output_dir;
  double epsilon = -1.0;
  double beta = -1.0;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
  cmd->add_option("-c,--config", opts.config_path, "JSON config file")->required();
  cmd->add_option("--set", opts.overrides,
                  "Override a config key, e.g. --set training.rounds=10");
  cmd->add_option("--method", opts.method, "Override the method");
  cmd->add_option("--rounds", opts.rounds, "Override training.rounds");
  cmd->add_option("--seeds", opts.seeds, "Override seeds, comma separated");
  cmd->add_option("--output-dir", opts.output_dir, "Override output_dir");
  cmd->add_option("--epsilon", opts.epsilon, "Enable DP with this budget");
  cmd->add_option("--beta", opts.beta, "Override data.beta");
}

fedlora::ExperimentConfig load_config(const CommonOptions& opts) {
  json root = json::parse(read_file(opts.config_path));
  for (const auto& o : opts.overrides) apply_override(root, o);
  if (!opts.method.empty()) root["method"] = opts.method;
  if (opts.rounds >= 0) root["training"]["rounds"] = opts.rounds;
  if (!opts.output_dir.empty()) root["output_dir"] = opts.output_dir;
  if (opts.epsilon >= 0.0) {
    root["privacy"]["enabled"] = opts.epsilon > 0.0;
    if (opts.epsilon > 0.0) root["privacy"]["epsilon"] = opts.epsilon;
  }
  if (opts.beta > 0.0) root["data"]["beta"] = opts.beta;
  if (!opts.seeds.empty()) {
    json seeds = json::array();
    std::stringstream ss(opts.seeds);
    std::string tok;
    while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
    root["seeds"] = seeds;
  }
  return fedlora::parse_config(root.dump());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated LoRA simulator: alternating aggregation and "
               "pseudo-inverse-regulated DP noise"};
  app.set_version_flag("--version", std::string("fedlora ") + fedlora::kToolVersion +
                                        " (config schema " +
                                        std::to_string(fedlora::kConfigSchemaVersion) +
                                        ")");
  app.require_subcommand(0, 1);

  CommonOptions run_opts, compare_opts, sweep_opts;
  auto* run_cmd = app.add_subcommand("run", "Run one experiment (all seeds)");
  add_common(run_cmd, run_opts);
  auto* compare_cmd =
      app.add_subcommand("compare", "Run several methods on shared settings");
  add_common(compare_cmd, compare_opts);
  auto* sweep_cmd =
      app.add_subcommand("sweep", "Cartesian sweep over budgets/betas/seeds");
  add_common(sweep_cmd, sweep_opts);

  std::string trace_path, trace_out, trace_method, trace_epsilon;
  auto* trace_cmd = app.add_subcommand(
      "trace-plot", "Emit per-term (round, norm) series from a noise trace");
  trace_cmd->add_option("-t,--trace", trace_path, "noise trace CSV")->required();
  trace_cmd->add_option("-o,--out", trace_out, "output directory");
  trace_cmd->add_option("--method", trace_method, "method label for file names");
  trace_cmd->add_option("--epsilon", trace_epsilon, "budget label for file names");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      const auto artifacts = fedlora::run_experiment(load_config(run_opts));
      std::cout << "wrote " << artifacts.summary_file << "\n";
    } else if (compare_cmd->parsed()) {
      const auto result = fedlora::compare_methods(load_config(compare_opts));
      std::ifstream table(result.table_txt);
      std::cout << table.rdbuf();
      std::cout << "wrote " << result.table_csv << "\n";
    } else if (sweep_cmd->parsed()) {
      const auto result = fedlora::sweep(load_config(sweep_opts));
      std::cout << "ran " << result.runs << " configurations, wrote "
                << result.results_csv << "\n";
    } else if (trace_cmd->parsed()) {
      if (trace_out.empty()) {
        trace_out = std::filesystem::path(trace_path).parent_path().string();
        if (trace_out.empty()) trace_out = ".";
      }
      // Labels default from the sibling summary.json when present.
      if (trace_method.empty() || trace_epsilon.empty()) {
        const auto summary_path =
            std::filesystem::path(trace_path).parent_path() / "summary.json";
        if (std::filesystem::exists(summary_path)) {
          const json summary = json::parse(read_file(summary_path.string()));
          if (trace_method.empty()) {
            trace_method = summary.value("method", "method");
          }
          if (trace_epsilon.empty() && summary.contains("privacy")) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%g",
                          summary["privacy"].value("epsilon", 0.0));
            trace_epsilon = summary["privacy"].value("enabled", false) ? buf : "off";
          }
        }
        if (trace_method.empty()) trace_method = "method";
        if (trace_epsilon.empty()) trace_epsilon = "unknown";
      }
      const auto series = fedlora::emit_noise_trace_plotdata(
          trace_path, trace_out, trace_method, trace_epsilon);
      for (const auto& s : series) {
        std::cout << s.term << ": " << s.file << " slope="
                  << (s.slope_defined ? fedlora::format_double(s.slope) : "undefined")
                  << "\n";
      }
    } else {
      std::cout << app.help();
    }
  } catch (const fedlora::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::ios_base::failure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIoError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    const std::string msg = e.what();
    if (msg.find("cannot open") != std::string::npos ||
        msg.find("write failed") != std::string::npos) {
      return kExitIoError;
    }
    return kExitRuntimeError;
  }
  return 0;
}
