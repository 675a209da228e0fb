#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fedlora/matrix.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {

enum class Split { Pretrain, Train, Val, Test };

const char* split_name(Split s);

struct Dataset {
  Matrix x;            // N x d features
  std::vector<int> y;  // labels in [0, classes)
  int classes = 0;
  Split split = Split::Train;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.cols(); }
};

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> shards;  // disjoint, covering
  double beta = 0.0;
  std::uint64_t seed = 0;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Gaussian class blobs: one mean per class on a sphere of radius class_sep,
/// unit covariance, labels balanced within +-1, row order shuffled.
Dataset make_synthetic(int classes, std::size_t dim, std::size_t n,
                       double class_sep, std::uint64_t seed);

/// Same generator with the class means tied to the seed, so different splits
/// share the distribution while drawing disjoint samples.
Dataset make_synthetic_split(int classes, std::size_t dim, std::size_t n,
                             double class_sep, std::uint64_t seed, Split split);

/// Label-ratio Dirichlet partition: per class, client shares ~ Dir(beta),
/// samples assigned multinomially. Resamples up to 100 times until every
/// shard has at least min_shard samples.
PartitionPlan dirichlet_partition(const std::vector<int>& labels, int clients,
                                  double beta, std::uint64_t seed,
                                  std::size_t min_shard);

/// Header row, comma separated, one label column; remaining columns are
/// numeric features. Features are standardized with train-split statistics;
/// rows are split by a seeded shuffle.
DatasetSplits load_csv(const std::string& path, const std::string& label_column,
                       std::array<double, 3> split_fractions,
                       std::uint64_t seed = 0);

/// Per-class label counts normalized to a distribution over `classes`.
std::vector<double> label_distribution(const std::vector<int>& labels,
                                       int classes);

/// Jensen-Shannon divergence between two distributions (natural log).
double js_divergence(const std::vector<double>& p, const std::vector<double>& q);

/// Mean JS divergence between each shard's label distribution and the
/// global one; the heterogeneity score of a partition.
double partition_heterogeneity(const std::vector<int>& labels,
                               const PartitionPlan& plan, int classes);

}  // namespace fedlora
