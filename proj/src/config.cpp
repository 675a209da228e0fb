#include "fedlora/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace fedlora {

using nlohmann::json;

namespace {

const std::set<std::string> kMethods = {"joint-lora", "ffa-lora", "deer"};
const std::set<std::string> kPhaseNames = {"TrainB", "TrainA", "TrainBoth"};
const std::set<std::string> kPatternPresets = {"100%", "75%", "50%"};

struct Issues {
  std::vector<std::string> list;
  void add(std::string msg) { list.push_back(std::move(msg)); }
  bool empty() const { return list.empty(); }
};

std::string path_join(const std::string& where, const std::string& key) {
  return where.empty() ? key : where + "." + key;
}

void check_keys(const json& obj, const std::string& where,
                const std::set<std::string>& allowed, Issues& issues) {
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) {
      issues.add("unknown key '" + path_join(where, key) + "'");
    }
  }
}

bool read_string(const json& obj, const std::string& where, const char* key,
                 std::string& out, Issues& issues) {
  if (!obj.contains(key)) return false;
  if (!obj[key].is_string()) {
    issues.add(path_join(where, key) + ": expected a string");
    return false;
  }
  out = obj[key].get<std::string>();
  return true;
}

bool read_bool(const json& obj, const std::string& where, const char* key,
               bool& out, Issues& issues) {
  if (!obj.contains(key)) return false;
  if (!obj[key].is_boolean()) {
    issues.add(path_join(where, key) + ": expected a boolean");
    return false;
  }
  out = obj[key].get<bool>();
  return true;
}

bool read_double(const json& obj, const std::string& where, const char* key,
                 double& out, Issues& issues) {
  if (!obj.contains(key)) return false;
  if (!obj[key].is_number()) {
    issues.add(path_join(where, key) + ": expected a number");
    return false;
  }
  out = obj[key].get<double>();
  return true;
}

bool read_int(const json& obj, const std::string& where, const char* key,
              long long& out, Issues& issues) {
  if (!obj.contains(key)) return false;
  if (!obj[key].is_number_integer()) {
    issues.add(path_join(where, key) + ": expected an integer");
    return false;
  }
  out = obj[key].get<long long>();
  return true;
}

bool read_size(const json& obj, const std::string& where, const char* key,
               std::size_t& out, Issues& issues) {
  long long v = 0;
  if (!read_int(obj, where, key, v, issues)) return false;
  if (v < 0) {
    issues.add(path_join(where, key) + ": must be non-negative");
    return false;
  }
  out = static_cast<std::size_t>(v);
  return true;
}

void parse_model(const json& obj, ModelSpec& model, Issues& issues) {
  check_keys(obj, "model",
             {"architecture", "hidden_dim", "rank", "alpha", "init_std",
              "adapt_layers"},
             issues);
  std::string arch;
  if (read_string(obj, "model", "architecture", arch, issues)) {
    if (auto a = architecture_from_name(arch)) {
      model.architecture = *a;
    } else {
      issues.add("model.architecture: unknown architecture '" + arch +
                 "' (expected linear-softmax or two-layer-mlp)");
    }
  }
  read_size(obj, "model", "hidden_dim", model.hidden_dim, issues);
  read_size(obj, "model", "rank", model.rank, issues);
  read_double(obj, "model", "alpha", model.alpha, issues);
  read_double(obj, "model", "init_std", model.init_std, issues);
  if (obj.contains("adapt_layers")) {
    if (!obj["adapt_layers"].is_array() || obj["adapt_layers"].empty()) {
      issues.add("model.adapt_layers: expected a non-empty array of layer indices");
    } else {
      std::vector<std::size_t> layers;
      bool ok = true;
      for (const auto& v : obj["adapt_layers"]) {
        if (!v.is_number_integer() || v.get<long long>() < 0) {
          issues.add("model.adapt_layers: entries must be non-negative integers");
          ok = false;
          break;
        }
        layers.push_back(v.get<std::size_t>());
      }
      if (ok) {
        std::sort(layers.begin(), layers.end());
        if (std::adjacent_find(layers.begin(), layers.end()) != layers.end()) {
          issues.add("model.adapt_layers: duplicate layer index");
        } else {
          model.adapt_layers = layers;
        }
      }
    }
  }

  if (model.hidden_dim == 0) issues.add("model.hidden_dim: must be >= 1");
  if (model.rank == 0) issues.add("model.rank: must be >= 1");
  if (model.alpha <= 0.0) issues.add("model.alpha: must be > 0");
  if (model.init_std <= 0.0) issues.add("model.init_std: must be > 0");
  const std::size_t layer_count =
      model.architecture == Architecture::LinearSoftmax ? 1 : 2;
  for (std::size_t l : model.adapted_layers()) {
    if (l >= layer_count) {
      issues.add("model.adapt_layers: layer " + std::to_string(l) +
                 " does not exist for " + architecture_name(model.architecture));
    }
  }
}

void parse_synthetic(const json& obj, SyntheticSpec& spec, Issues& issues) {
  check_keys(obj, "data.synthetic",
             {"classes", "dim", "train_samples", "val_samples", "test_samples",
              "pretrain_samples", "class_sep"},
             issues);
  long long classes = spec.classes;
  if (read_int(obj, "data.synthetic", "classes", classes, issues)) {
    spec.classes = static_cast<int>(classes);
  }
  read_size(obj, "data.synthetic", "dim", spec.dim, issues);
  read_size(obj, "data.synthetic", "train_samples", spec.train_samples, issues);
  read_size(obj, "data.synthetic", "val_samples", spec.val_samples, issues);
  read_size(obj, "data.synthetic", "test_samples", spec.test_samples, issues);
  read_size(obj, "data.synthetic", "pretrain_samples", spec.pretrain_samples, issues);
  read_double(obj, "data.synthetic", "class_sep", spec.class_sep, issues);

  if (spec.classes < 2) issues.add("data.synthetic.classes: must be >= 2");
  if (spec.dim < static_cast<std::size_t>(std::max(spec.classes, 2))) {
    issues.add("data.synthetic.dim: must be >= classes");
  }
  if (spec.train_samples == 0) issues.add("data.synthetic.train_samples: must be >= 1");
  if (spec.test_samples == 0) issues.add("data.synthetic.test_samples: must be >= 1");
  if (spec.pretrain_samples == 0) issues.add("data.synthetic.pretrain_samples: must be >= 1");
  if (spec.class_sep < 0.0) issues.add("data.synthetic.class_sep: must be >= 0");
}

void parse_csv(const json& obj, CsvSpec& spec, Issues& issues) {
  check_keys(obj, "data.csv", {"path", "label_column", "fractions"}, issues);
  read_string(obj, "data.csv", "path", spec.path, issues);
  read_string(obj, "data.csv", "label_column", spec.label_column, issues);
  if (obj.contains("fractions")) {
    const auto& fr = obj["fractions"];
    if (!fr.is_array() || fr.size() != 3 ||
        !std::all_of(fr.begin(), fr.end(), [](const json& v) { return v.is_number(); })) {
      issues.add("data.csv.fractions: expected an array of 3 numbers");
    } else {
      for (int i = 0; i < 3; ++i) spec.fractions[i] = fr[i].get<double>();
    }
  }
  if (spec.path.empty()) issues.add("data.csv.path: required for csv source");
  if (spec.label_column.empty()) issues.add("data.csv.label_column: must be non-empty");
  const double fsum = spec.fractions[0] + spec.fractions[1] + spec.fractions[2];
  if (std::fabs(fsum - 1.0) > 1e-9 ||
      std::any_of(spec.fractions.begin(), spec.fractions.end(),
                  [](double f) { return f < 0.0; })) {
    issues.add("data.csv.fractions: must be non-negative and sum to 1");
  }
}

void parse_data(const json& obj, DataSpec& data, Issues& issues) {
  check_keys(obj, "data",
             {"source", "synthetic", "csv", "clients", "beta", "min_shard"},
             issues);
  std::string source;
  if (read_string(obj, "data", "source", source, issues)) {
    if (source == "synthetic") {
      data.source = DataSource::Synthetic;
    } else if (source == "csv") {
      data.source = DataSource::Csv;
    } else {
      issues.add("data.source: expected 'synthetic' or 'csv'");
    }
  }
  if (data.source == DataSource::Synthetic && obj.contains("csv")) {
    issues.add("data: exactly one data source — csv block given with synthetic source");
  }
  if (data.source == DataSource::Csv && obj.contains("synthetic")) {
    issues.add("data: exactly one data source — synthetic block given with csv source");
  }
  if (obj.contains("synthetic")) {
    if (!obj["synthetic"].is_object()) {
      issues.add("data.synthetic: expected an object");
    } else {
      parse_synthetic(obj["synthetic"], data.synthetic, issues);
    }
  }
  if (obj.contains("csv")) {
    if (!obj["csv"].is_object()) {
      issues.add("data.csv: expected an object");
    } else {
      parse_csv(obj["csv"], data.csv, issues);
    }
  }
  if (data.source == DataSource::Csv && !obj.contains("csv")) {
    issues.add("data.csv: required when data.source is 'csv'");
  }
  long long clients = data.clients;
  if (read_int(obj, "data", "clients", clients, issues)) {
    data.clients = static_cast<int>(clients);
  }
  read_double(obj, "data", "beta", data.beta, issues);
  if (obj.contains("min_shard")) {
    std::size_t ms = 0;
    if (read_size(obj, "data", "min_shard", ms, issues)) data.min_shard = ms;
  }
  if (data.clients < 1) issues.add("data.clients: must be >= 1");
  if (data.beta <= 0.0) issues.add("data.beta: must be > 0");
  if (data.min_shard && *data.min_shard == 0) issues.add("data.min_shard: must be >= 1");
}

void parse_training(const json& obj, TrainingSpec& training, Issues& issues) {
  check_keys(obj, "training",
             {"rounds", "local_epochs", "batch_size", "learning_rate",
              "pretrain_epochs", "pretrain_learning_rate"},
             issues);
  long long v = 0;
  if (read_int(obj, "training", "rounds", v, issues)) training.rounds = static_cast<int>(v);
  if (read_int(obj, "training", "local_epochs", v, issues)) {
    training.local_epochs = static_cast<int>(v);
  }
  read_size(obj, "training", "batch_size", training.batch_size, issues);
  read_double(obj, "training", "learning_rate", training.learning_rate, issues);
  if (read_int(obj, "training", "pretrain_epochs", v, issues)) {
    training.pretrain_epochs = static_cast<int>(v);
  }
  read_double(obj, "training", "pretrain_learning_rate",
              training.pretrain_learning_rate, issues);

  if (training.rounds < 0) issues.add("training.rounds: must be >= 0");
  if (training.local_epochs < 1) issues.add("training.local_epochs: must be >= 1");
  if (training.batch_size == 0) issues.add("training.batch_size: must be >= 1");
  if (training.learning_rate <= 0.0) issues.add("training.learning_rate: must be > 0");
  if (training.pretrain_epochs < 0) issues.add("training.pretrain_epochs: must be >= 0");
  if (training.pretrain_learning_rate <= 0.0) {
    issues.add("training.pretrain_learning_rate: must be > 0");
  }
}

void parse_privacy(const json& obj, PrivacyConfig& privacy, Issues& issues) {
  check_keys(obj, "privacy",
             {"enabled", "epsilon", "delta", "clip", "clip_grid"}, issues);
  read_bool(obj, "privacy", "enabled", privacy.enabled, issues);
  read_double(obj, "privacy", "epsilon", privacy.epsilon, issues);
  if (obj.contains("delta")) {
    double d = 0.0;
    if (read_double(obj, "privacy", "delta", d, issues)) privacy.delta = d;
  }
  if (obj.contains("clip")) {
    if (obj["clip"].is_string()) {
      if (obj["clip"].get<std::string>() == "auto") {
        privacy.clip_auto = true;
      } else {
        issues.add("privacy.clip: expected a positive number or 'auto'");
      }
    } else if (obj["clip"].is_number()) {
      privacy.clip = obj["clip"].get<double>();
      privacy.clip_auto = false;
    } else {
      issues.add("privacy.clip: expected a positive number or 'auto'");
    }
  }
  if (obj.contains("clip_grid")) {
    const auto& g = obj["clip_grid"];
    if (!g.is_array() || g.empty() ||
        !std::all_of(g.begin(), g.end(), [](const json& v) { return v.is_number(); })) {
      issues.add("privacy.clip_grid: expected a non-empty array of numbers");
    } else {
      privacy.clip_grid.clear();
      for (const auto& v : g) privacy.clip_grid.push_back(v.get<double>());
    }
  }

  if (privacy.epsilon <= 0.0) issues.add("privacy.epsilon: must be > 0");
  if (privacy.delta && (*privacy.delta <= 0.0 || *privacy.delta >= 1.0)) {
    issues.add("privacy.delta: must be in (0, 1)");
  }
  if (!privacy.clip_auto && privacy.clip <= 0.0) {
    issues.add("privacy.clip: must be > 0");
  }
  for (double c : privacy.clip_grid) {
    if (c <= 0.0) {
      issues.add("privacy.clip_grid: entries must be > 0");
      break;
    }
  }
}

void parse_pattern(const json& value,
                   std::optional<std::vector<std::vector<std::string>>>& pattern,
                   Issues& issues) {
  if (value.is_string()) {
    const std::string preset = value.get<std::string>();
    if (preset == "100%") {
      pattern = {{"TrainB", "TrainA"}};
    } else if (preset == "75%") {
      pattern = {{"TrainB", "TrainA"}, {"TrainB"}};
    } else if (preset == "50%") {
      pattern = {{"TrainB"}, {"TrainA"}};
    } else {
      issues.add("pattern: unknown preset '" + preset +
                 "' (expected 100%, 75%, 50% or an array of rounds)");
    }
    return;
  }
  if (!value.is_array() || value.empty()) {
    issues.add("pattern: expected a preset string or a non-empty array of rounds");
    return;
  }
  std::vector<std::vector<std::string>> rounds;
  for (const auto& round : value) {
    if (!round.is_array() || round.empty()) {
      issues.add("pattern: each round must be a non-empty array of phases");
      return;
    }
    std::vector<std::string> phases;
    for (const auto& p : round) {
      if (!p.is_string() || !kPhaseNames.count(p.get<std::string>())) {
        issues.add("pattern: phases must be TrainB, TrainA or TrainBoth");
        return;
      }
      phases.push_back(p.get<std::string>());
    }
    rounds.push_back(std::move(phases));
  }
  pattern = std::move(rounds);
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> issues)
    : std::runtime_error(join(issues)), issues_(std::move(issues)) {}

std::string ConfigError::join(const std::vector<std::string>& issues) {
  std::ostringstream os;
  os << "config validation failed (" << issues.size() << " issue"
     << (issues.size() == 1 ? "" : "s") << "):";
  for (const auto& issue : issues) os << "\n  - " << issue;
  return os.str();
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError({std::string("invalid JSON: ") + e.what()});
  }
  if (!root.is_object()) throw ConfigError({"config root must be a JSON object"});

  Issues issues;
  ExperimentConfig cfg;
  check_keys(root, "",
             {"method", "model", "data", "training", "privacy", "pattern",
              "seeds", "output_dir", "methods", "epsilons", "betas"},
             issues);

  read_string(root, "", "method", cfg.method, issues);
  if (root.contains("methods")) {
    const auto& ms = root["methods"];
    if (!ms.is_array() || ms.empty() ||
        !std::all_of(ms.begin(), ms.end(), [](const json& v) { return v.is_string(); })) {
      issues.add("methods: expected a non-empty array of method names");
    } else {
      for (const auto& m : ms) cfg.methods.push_back(m.get<std::string>());
    }
  }
  if (cfg.method.empty() && cfg.methods.empty()) {
    issues.add("method: required (one of joint-lora, ffa-lora, deer)");
  }
  if (!cfg.method.empty() && !kMethods.count(cfg.method)) {
    issues.add("method: unknown method '" + cfg.method +
               "' (expected joint-lora, ffa-lora or deer)");
  }
  for (const auto& m : cfg.methods) {
    if (!kMethods.count(m)) issues.add("methods: unknown method '" + m + "'");
  }

  for (const char* section : {"model", "data", "training", "privacy"}) {
    if (root.contains(section) && !root[section].is_object()) {
      issues.add(std::string(section) + ": expected an object");
    }
  }
  if (root.contains("model") && root["model"].is_object()) {
    parse_model(root["model"], cfg.model, issues);
  }
  if (root.contains("data") && root["data"].is_object()) {
    parse_data(root["data"], cfg.data, issues);
  }
  if (root.contains("training") && root["training"].is_object()) {
    parse_training(root["training"], cfg.training, issues);
  }
  if (root.contains("privacy") && root["privacy"].is_object()) {
    parse_privacy(root["privacy"], cfg.privacy, issues);
  }

  if (root.contains("pattern")) {
    parse_pattern(root["pattern"], cfg.pattern, issues);
    const bool deer_present =
        cfg.method == "deer" ||
        std::find(cfg.methods.begin(), cfg.methods.end(), "deer") != cfg.methods.end();
    if (!deer_present) {
      issues.add("pattern: only valid with method 'deer'");
    }
  }

  if (root.contains("seeds")) {
    const auto& s = root["seeds"];
    if (!s.is_array() || s.empty() ||
        !std::all_of(s.begin(), s.end(), [](const json& v) {
          return v.is_number_integer() && v.get<long long>() >= 0;
        })) {
      issues.add("seeds: expected a non-empty array of non-negative integers");
    } else {
      cfg.seeds.clear();
      for (const auto& v : s) cfg.seeds.push_back(v.get<std::uint64_t>());
      std::set<std::uint64_t> uniq(cfg.seeds.begin(), cfg.seeds.end());
      if (uniq.size() != cfg.seeds.size()) issues.add("seeds: duplicate seed");
    }
  }

  read_string(root, "", "output_dir", cfg.output_dir, issues);
  if (cfg.output_dir.empty()) issues.add("output_dir: must be non-empty");

  for (const char* key : {"epsilons", "betas"}) {
    if (!root.contains(key)) continue;
    const auto& arr = root[key];
    if (!arr.is_array() || arr.empty() ||
        !std::all_of(arr.begin(), arr.end(), [](const json& v) { return v.is_number(); })) {
      issues.add(std::string(key) + ": expected a non-empty array of numbers");
      continue;
    }
    auto& target = std::string(key) == "epsilons" ? cfg.epsilons : cfg.betas;
    for (const auto& v : arr) target.push_back(v.get<double>());
  }
  // A zero epsilon means "DP off" in budget sweeps.
  for (double e : cfg.epsilons) {
    if (e < 0.0) issues.add("epsilons: entries must be >= 0 (0 = DP off)");
  }
  for (double b : cfg.betas) {
    if (b <= 0.0) issues.add("betas: entries must be > 0");
  }

  // Rank vs layer dimensions is checkable up front for synthetic data.
  if (cfg.data.source == DataSource::Synthetic && issues.empty()) {
    const std::size_t classes = static_cast<std::size_t>(cfg.data.synthetic.classes);
    for (std::size_t l : cfg.model.adapted_layers()) {
      std::size_t rows, cols;
      if (cfg.model.architecture == Architecture::LinearSoftmax) {
        rows = classes;
        cols = cfg.data.synthetic.dim;
      } else {
        rows = l == 0 ? cfg.model.hidden_dim : classes;
        cols = l == 0 ? cfg.data.synthetic.dim : cfg.model.hidden_dim;
      }
      if (cfg.model.rank > std::min(rows, cols)) {
        issues.add("model.rank: rank " + std::to_string(cfg.model.rank) +
                   " exceeds min dimension of layer " + std::to_string(l) + " (" +
                   std::to_string(rows) + "x" + std::to_string(cols) + ")");
      }
    }
  }

  if (!issues.empty()) throw ConfigError(std::move(issues.list));
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json j;
  if (!cfg.method.empty()) j["method"] = cfg.method;
  if (!cfg.methods.empty()) j["methods"] = cfg.methods;

  j["model"]["architecture"] = architecture_name(cfg.model.architecture);
  j["model"]["hidden_dim"] = cfg.model.hidden_dim;
  j["model"]["rank"] = cfg.model.rank;
  j["model"]["alpha"] = cfg.model.alpha;
  j["model"]["init_std"] = cfg.model.init_std;
  j["model"]["adapt_layers"] = cfg.model.adapted_layers();

  j["data"]["source"] = cfg.data.source == DataSource::Synthetic ? "synthetic" : "csv";
  if (cfg.data.source == DataSource::Synthetic) {
    j["data"]["synthetic"] = {{"classes", cfg.data.synthetic.classes},
                              {"dim", cfg.data.synthetic.dim},
                              {"train_samples", cfg.data.synthetic.train_samples},
                              {"val_samples", cfg.data.synthetic.val_samples},
                              {"test_samples", cfg.data.synthetic.test_samples},
                              {"pretrain_samples", cfg.data.synthetic.pretrain_samples},
                              {"class_sep", cfg.data.synthetic.class_sep}};
  } else {
    j["data"]["csv"] = {{"path", cfg.data.csv.path},
                        {"label_column", cfg.data.csv.label_column},
                        {"fractions", cfg.data.csv.fractions}};
  }
  j["data"]["clients"] = cfg.data.clients;
  j["data"]["beta"] = cfg.data.beta;
  j["data"]["min_shard"] = cfg.data.min_shard_or_default(cfg.training.batch_size);

  j["training"] = {{"rounds", cfg.training.rounds},
                   {"local_epochs", cfg.training.local_epochs},
                   {"batch_size", cfg.training.batch_size},
                   {"learning_rate", cfg.training.learning_rate},
                   {"pretrain_epochs", cfg.training.pretrain_epochs},
                   {"pretrain_learning_rate", cfg.training.pretrain_learning_rate}};

  j["privacy"]["enabled"] = cfg.privacy.enabled;
  j["privacy"]["epsilon"] = cfg.privacy.epsilon;
  j["privacy"]["delta"] = cfg.privacy.delta_or_default(cfg.data.clients);
  if (cfg.privacy.clip_auto) {
    j["privacy"]["clip"] = "auto";
  } else {
    j["privacy"]["clip"] = cfg.privacy.clip;
  }
  j["privacy"]["clip_grid"] = cfg.privacy.clip_grid;

  const bool deer_present =
      cfg.method == "deer" ||
      std::find(cfg.methods.begin(), cfg.methods.end(), "deer") != cfg.methods.end();
  if (deer_present) {
    j["pattern"] = cfg.pattern ? *cfg.pattern
                               : std::vector<std::vector<std::string>>{
                                     {"TrainB", "TrainA"}};
  }

  j["seeds"] = cfg.seeds;
  j["output_dir"] = cfg.output_dir;
  if (!cfg.epsilons.empty()) j["epsilons"] = cfg.epsilons;
  if (!cfg.betas.empty()) j["betas"] = cfg.betas;
  return j.dump(2);
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return serialize_config(a) == serialize_config(b);
}

}  // namespace fedlora
