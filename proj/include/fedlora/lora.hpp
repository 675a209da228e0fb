#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedlora/data.hpp"
#include "fedlora/matrix.hpp"
#include "fedlora/rng.hpp"

namespace fedlora {

/// Which low-rank factor(s) the next optimization steps may touch.
enum class TrainableSelector { OnlyA, OnlyB, Both };

enum class Architecture { LinearSoftmax, TwoLayerMlp };

const char* architecture_name(Architecture a);
std::optional<Architecture> architecture_from_name(const std::string& name);

/// Low-rank pair attached to a frozen base weight: the effective update is
/// (alpha / rank) * B A with B zero-initialized and A Gaussian.
struct LoraAdapter {
  Matrix b;  // rows x rank
  Matrix a;  // rank x cols
  std::size_t rank = 0;
  double alpha = 1.0;
};

LoraAdapter init_adapter(std::size_t rows, std::size_t cols, std::size_t rank,
                         double alpha, double init_std, Rng& rng);

Matrix effective_update(const LoraAdapter& adapter);

struct LinearLayer {
  Matrix weight;             // out x in, frozen once the base is built
  std::vector<double> bias;  // out, frozen alongside the weight
  std::optional<LoraAdapter> adapter;
};

/// Frozen base weights plus optional adapters. Forward computes
/// x (W0 + effective_update)^T + bias per layer, ReLU between MLP layers.
struct LoraModel {
  Architecture architecture = Architecture::LinearSoftmax;
  std::vector<LinearLayer> layers;

  std::size_t input_dim() const { return layers.front().weight.cols(); }
  std::size_t output_dim() const { return layers.back().weight.rows(); }
};

LoraModel make_model(Architecture arch, std::size_t input_dim,
                     std::size_t classes, std::size_t hidden_dim = 0);

void attach_adapter(LoraModel& model, std::size_t layer, std::size_t rank,
                    double alpha, double init_std, Rng& rng);

Matrix forward(const LoraModel& model, const Matrix& x);

/// Per-layer adapter gradients; absent entries are frozen by the selector
/// or belong to layers without adapters.
struct LayerGrads {
  std::optional<Matrix> a_grad;
  std::optional<Matrix> b_grad;
};

struct LossGrads {
  double loss = 0.0;
  std::vector<LayerGrads> layers;
};

/// Mean softmax cross-entropy and analytic gradients for the factors the
/// selector marks trainable.
LossGrads loss_and_grads(const LoraModel& model, const Matrix& x,
                         const std::vector<int>& y, TrainableSelector selector);

void sgd_step(LoraModel& model, const std::vector<LayerGrads>& grads, double lr);

/// E epochs of mini-batch SGD on one data shard, gradients restricted by the
/// selector; the shard is reshuffled once per epoch from rng, last partial
/// batch kept.
void local_train(LoraModel& model, const Dataset& data,
                 const std::vector<std::size_t>& shard,
                 TrainableSelector selector, int epochs, std::size_t batch_size,
                 double lr, Rng& rng);

/// Full-weight training used to manufacture the frozen base model; adapters
/// are not involved.
void pretrain_dense(LoraModel& model, const Dataset& data, int epochs,
                    std::size_t batch_size, double lr, Rng& rng);

}  // namespace fedlora
