#include "fedlora/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fedlora {

namespace {

double sample_gamma(double shape, Rng& rng) {
  if (shape < 1.0) {
    // Boost trick: G(a) = G(a+1) * U^(1/a).
    const double u = 1.0 - rng.next_double();  // (0, 1]
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang squeeze.
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = rng.next_gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - rng.next_double();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> sample_dirichlet(double beta, int k, Rng& rng) {
  std::vector<double> p(k);
  for (;;) {
    double sum = 0.0;
    for (auto& v : p) {
      v = sample_gamma(beta, rng);
      sum += v;
    }
    if (sum > 0.0) {
      for (auto& v : p) v /= sum;
      return p;
    }
  }
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.next_u64() % i;
    std::swap(idx[i - 1], idx[j]);
  }
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::Pretrain: return "pretrain";
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Dataset make_synthetic_split(int classes, std::size_t dim, std::size_t n,
                             double class_sep, std::uint64_t seed, Split split) {
  if (classes < 2) throw std::invalid_argument("make_synthetic: classes must be >= 2");
  if (dim < static_cast<std::size_t>(classes)) {
    throw std::invalid_argument("make_synthetic: dim must be >= classes");
  }
  if (n == 0) throw std::invalid_argument("make_synthetic: n must be >= 1");
  if (class_sep < 0.0) throw std::invalid_argument("make_synthetic: class_sep must be >= 0");

  Rng master(seed);
  Rng means_rng = master.split(0);
  Rng feature_rng = master.split(1 + static_cast<std::uint64_t>(split));

  // One mean per class on the radius-class_sep sphere; shared across splits
  // because the stream depends only on the seed.
  std::vector<std::vector<double>> means(classes, std::vector<double>(dim));
  for (auto& mu : means) {
    double norm = 0.0;
    for (auto& v : mu) {
      v = means_rng.next_gaussian();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    const double scale = norm > 0.0 ? class_sep / norm : 0.0;
    for (auto& v : mu) v *= scale;
  }

  Dataset out;
  out.classes = classes;
  out.split = split;
  out.x = Matrix(n, dim);
  out.y.resize(n);

  std::size_t row = 0;
  for (int c = 0; c < classes; ++c) {
    std::size_t count = n / classes + (static_cast<std::size_t>(c) < n % classes ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i, ++row) {
      out.y[row] = c;
      for (std::size_t j = 0; j < dim; ++j) {
        out.x(row, j) = means[c][j] + feature_rng.next_gaussian();
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  shuffle_indices(order, feature_rng);
  Dataset shuffled;
  shuffled.classes = classes;
  shuffled.split = split;
  shuffled.x = Matrix(n, dim);
  shuffled.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    shuffled.y[i] = out.y[order[i]];
    for (std::size_t j = 0; j < dim; ++j) shuffled.x(i, j) = out.x(order[i], j);
  }
  return shuffled;
}

Dataset make_synthetic(int classes, std::size_t dim, std::size_t n,
                       double class_sep, std::uint64_t seed) {
  return make_synthetic_split(classes, dim, n, class_sep, seed, Split::Train);
}

PartitionPlan dirichlet_partition(const std::vector<int>& labels, int clients,
                                  double beta, std::uint64_t seed,
                                  std::size_t min_shard) {
  if (clients < 1) throw std::invalid_argument("dirichlet_partition: clients must be >= 1");
  if (beta <= 0.0) throw std::invalid_argument("dirichlet_partition: beta must be > 0");
  if (labels.empty()) throw std::invalid_argument("dirichlet_partition: empty labels");
  if (min_shard == 0) min_shard = 1;

  const int classes = 1 + *std::max_element(labels.begin(), labels.end());
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) throw std::invalid_argument("dirichlet_partition: negative label");
    by_class[labels[i]].push_back(i);
  }

  Rng rng(seed);
  constexpr int kMaxAttempts = 100;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::vector<std::vector<std::size_t>> shards(clients);
    for (int c = 0; c < classes; ++c) {
      if (by_class[c].empty()) continue;
      const std::vector<double> p = sample_dirichlet(beta, clients, rng);
      std::vector<double> cdf(p.size());
      std::partial_sum(p.begin(), p.end(), cdf.begin());
      for (std::size_t idx : by_class[c]) {
        const double u = rng.next_double();
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        std::size_t k = static_cast<std::size_t>(it - cdf.begin());
        if (k >= shards.size()) k = shards.size() - 1;
        shards[k].push_back(idx);
      }
    }
    const bool ok = std::all_of(shards.begin(), shards.end(), [&](const auto& s) {
      return s.size() >= min_shard;
    });
    if (ok) {
      PartitionPlan plan;
      plan.shards = std::move(shards);
      plan.beta = beta;
      plan.seed = seed;
      return plan;
    }
  }
  throw std::runtime_error(
      "dirichlet_partition: could not satisfy min_shard=" +
      std::to_string(min_shard) + " within 100 attempts");
}

DatasetSplits load_csv(const std::string& path, const std::string& label_column,
                       std::array<double, 3> split_fractions, std::uint64_t seed) {
  const double fsum = split_fractions[0] + split_fractions[1] + split_fractions[2];
  if (std::fabs(fsum - 1.0) > 1e-9 ||
      std::any_of(split_fractions.begin(), split_fractions.end(),
                  [](double f) { return f < 0.0; })) {
    throw std::invalid_argument("load_csv: split fractions must be non-negative and sum to 1");
  }

  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_csv: empty file " + path);
  const std::vector<std::string> header = split_line(line);

  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) label_idx = i;
  }
  if (label_idx == header.size()) {
    throw std::runtime_error("load_csv: label column '" + label_column +
                             "' not found in " + path);
  }

  std::vector<std::vector<double>> feature_rows;
  std::vector<std::string> label_cells;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size()) {
      throw std::runtime_error("load_csv: row " + std::to_string(lineno) +
                               " has " + std::to_string(cells.size()) +
                               " cells, expected " + std::to_string(header.size()));
    }
    std::vector<double> feats;
    feats.reserve(header.size() - 1);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == label_idx) {
        label_cells.push_back(cells[i]);
        continue;
      }
      try {
        std::size_t pos = 0;
        const double v = std::stod(cells[i], &pos);
        if (pos != cells[i].size() || !std::isfinite(v)) throw std::invalid_argument("");
        feats.push_back(v);
      } catch (const std::exception&) {
        throw std::runtime_error("load_csv: non-numeric value '" + cells[i] +
                                 "' at row " + std::to_string(lineno) +
                                 " column '" + header[i] + "'");
      }
    }
    feature_rows.push_back(std::move(feats));
  }
  if (feature_rows.empty()) throw std::runtime_error("load_csv: no data rows in " + path);

  // Label ids: numeric order when every label parses as an integer,
  // lexicographic otherwise.
  std::vector<std::string> unique_labels = label_cells;
  std::sort(unique_labels.begin(), unique_labels.end());
  unique_labels.erase(std::unique(unique_labels.begin(), unique_labels.end()),
                      unique_labels.end());
  const bool all_numeric =
      std::all_of(unique_labels.begin(), unique_labels.end(), [](const std::string& s) {
        if (s.empty()) return false;
        std::size_t pos = 0;
        try {
          (void)std::stol(s, &pos);
        } catch (const std::exception&) {
          return false;
        }
        return pos == s.size();
      });
  if (all_numeric) {
    std::sort(unique_labels.begin(), unique_labels.end(),
              [](const std::string& a, const std::string& b) {
                return std::stol(a) < std::stol(b);
              });
  }
  std::vector<int> y(label_cells.size());
  for (std::size_t i = 0; i < label_cells.size(); ++i) {
    y[i] = static_cast<int>(
        std::lower_bound(unique_labels.begin(), unique_labels.end(), label_cells[i],
                         [&](const std::string& a, const std::string& b) {
                           return all_numeric ? std::stol(a) < std::stol(b) : a < b;
                         }) -
        unique_labels.begin());
  }
  const int classes = static_cast<int>(unique_labels.size());

  const std::size_t n = feature_rows.size();
  const std::size_t d = feature_rows.front().size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle_indices(order, rng);

  const std::size_t n_train = static_cast<std::size_t>(std::floor(split_fractions[0] * n));
  const std::size_t n_val = static_cast<std::size_t>(std::floor(split_fractions[1] * n));
  const std::size_t n_test = n - n_train - n_val;

  // Standardization statistics come from the train rows only.
  std::vector<double> mean(d, 0.0);
  std::vector<double> var(d, 0.0);
  if (n_train > 0) {
    for (std::size_t i = 0; i < n_train; ++i) {
      const auto& row = feature_rows[order[i]];
      for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (double& m : mean) m /= static_cast<double>(n_train);
    for (std::size_t i = 0; i < n_train; ++i) {
      const auto& row = feature_rows[order[i]];
      for (std::size_t j = 0; j < d; ++j) {
        const double c = row[j] - mean[j];
        var[j] += c * c;
      }
    }
    for (double& v : var) v /= static_cast<double>(n_train);
  }
  std::vector<double> inv_std(d);
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = var[j] > 0.0 ? 1.0 / std::sqrt(var[j]) : 1.0;

  auto build = [&](std::size_t begin, std::size_t count, Split split) {
    Dataset ds;
    ds.classes = classes;
    ds.split = split;
    ds.x = Matrix(count, d);
    ds.y.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t src = order[begin + i];
      ds.y[i] = y[src];
      for (std::size_t j = 0; j < d; ++j) {
        ds.x(i, j) = (feature_rows[src][j] - mean[j]) * inv_std[j];
      }
    }
    return ds;
  };

  DatasetSplits out;
  out.train = build(0, n_train, Split::Train);
  out.val = build(n_train, n_val, Split::Val);
  out.test = build(n_train + n_val, n_test, Split::Test);
  return out;
}

std::vector<double> label_distribution(const std::vector<int>& labels, int classes) {
  std::vector<double> p(classes, 0.0);
  for (int l : labels) {
    if (l >= 0 && l < classes) p[l] += 1.0;
  }
  if (!labels.empty()) {
    for (double& v : p) v /= static_cast<double>(labels.size());
  }
  return p;
}

double js_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("js_divergence: size mismatch");
  auto kl = [](const std::vector<double>& a, const std::vector<double>& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] > 0.0) s += a[i] * std::log(a[i] / m[i]);
    }
    return s;
  };
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl(p, m) + 0.5 * kl(q, m);
}

double partition_heterogeneity(const std::vector<int>& labels,
                               const PartitionPlan& plan, int classes) {
  const std::vector<double> global = label_distribution(labels, classes);
  double sum = 0.0;
  for (const auto& shard : plan.shards) {
    std::vector<int> shard_labels;
    shard_labels.reserve(shard.size());
    for (std::size_t idx : shard) shard_labels.push_back(labels[idx]);
    sum += js_divergence(label_distribution(shard_labels, classes), global);
  }
  return plan.shards.empty() ? 0.0 : sum / static_cast<double>(plan.shards.size());
}

}  // namespace fedlora
