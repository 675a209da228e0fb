#include "fedlora/lora.hpp"

#include "fedlora/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedlora {

namespace {

Matrix layer_effective_weight(const LinearLayer& layer) {
  if (!layer.adapter) return layer.weight;
  return layer.weight + effective_update(*layer.adapter);
}

struct ForwardCache {
  std::vector<Matrix> effective_weights;
  std::vector<Matrix> preacts;      // z_l = input_l W_l^T + b_l
  std::vector<Matrix> activations;  // input to layer l (activations[0] = x)
};

Matrix affine(const Matrix& input, const Matrix& weight,
              const std::vector<double>& bias) {
  Matrix z = matmul(input, transpose(weight));
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += bias[j];
  }
  return z;
}

Matrix relu(const Matrix& m) {
  Matrix out = m;
  for (double& v : out.mutable_data()) v = v > 0.0 ? v : 0.0;
  return out;
}

ForwardCache forward_cached(const LoraModel& model, const Matrix& x) {
  if (model.layers.empty()) throw std::invalid_argument("forward: model has no layers");
  if (x.cols() != model.input_dim()) {
    throw std::invalid_argument("forward: input has " + std::to_string(x.cols()) +
                                " features, model expects " +
                                std::to_string(model.input_dim()));
  }
  ForwardCache cache;
  cache.activations.push_back(x);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    cache.effective_weights.push_back(layer_effective_weight(model.layers[l]));
    Matrix z = affine(cache.activations.back(), cache.effective_weights[l],
                      model.layers[l].bias);
    cache.preacts.push_back(z);
    if (l + 1 < model.layers.size()) {
      cache.activations.push_back(relu(z));
    }
  }
  return cache;
}

/// Mean cross-entropy of softmax(logits) against labels, and (optionally)
/// the gradient with respect to the logits.
double cross_entropy(const Matrix& logits, const std::vector<int>& y,
                     Matrix* dlogits) {
  const std::size_t n = logits.rows();
  const std::size_t c = logits.cols();
  if (dlogits) *dlogits = Matrix(n, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double zmax = logits(i, 0);
    for (std::size_t j = 1; j < c; ++j) zmax = std::max(zmax, logits(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(logits(i, j) - zmax);
    const double lse = zmax + std::log(sum);
    loss += lse - logits(i, y[i]);
    if (dlogits) {
      for (std::size_t j = 0; j < c; ++j) {
        double p = std::exp(logits(i, j) - lse);
        (*dlogits)(i, j) = (p - (static_cast<int>(j) == y[i] ? 1.0 : 0.0)) /
                           static_cast<double>(n);
      }
    }
  }
  return loss / static_cast<double>(n);
}

void check_labels(const LoraModel& model, const Matrix& x,
                  const std::vector<int>& y) {
  if (y.empty() || x.rows() == 0) throw std::invalid_argument("loss: empty batch");
  if (y.size() != x.rows()) throw std::invalid_argument("loss: batch size mismatch");
  const int classes = static_cast<int>(model.output_dim());
  for (int label : y) {
    if (label < 0 || label >= classes) {
      throw std::invalid_argument("loss: label " + std::to_string(label) +
                                  " out of range [0, " + std::to_string(classes) + ")");
    }
  }
}

/// Backpropagates mean cross-entropy; returns per-layer gradients of the
/// effective weights (and bias gradients if requested).
double backprop_effective(const LoraModel& model, const Matrix& x,
                          const std::vector<int>& y,
                          std::vector<Matrix>* dweights,
                          std::vector<std::vector<double>>* dbiases) {
  check_labels(model, x, y);
  ForwardCache cache = forward_cached(model, x);

  Matrix dz;
  const double loss = cross_entropy(cache.preacts.back(), y, &dz);

  dweights->assign(model.layers.size(), Matrix());
  if (dbiases) dbiases->assign(model.layers.size(), {});
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    (*dweights)[li] = matmul(transpose(dz), cache.activations[li]);
    if (dbiases) {
      std::vector<double> db(dz.cols(), 0.0);
      for (std::size_t i = 0; i < dz.rows(); ++i) {
        for (std::size_t j = 0; j < dz.cols(); ++j) db[j] += dz(i, j);
      }
      (*dbiases)[li] = std::move(db);
    }
    if (li > 0) {
      Matrix dinput = matmul(dz, cache.effective_weights[li]);
      // ReLU mask from the previous pre-activation.
      const Matrix& pre = cache.preacts[li - 1];
      for (std::size_t i = 0; i < dinput.rows(); ++i) {
        for (std::size_t j = 0; j < dinput.cols(); ++j) {
          if (pre(i, j) <= 0.0) dinput(i, j) = 0.0;
        }
      }
      dz = std::move(dinput);
    }
  }
  return loss;
}

std::vector<std::vector<std::size_t>> make_batches(
    const std::vector<std::size_t>& shard, std::size_t batch_size, Rng& rng) {
  std::vector<std::size_t> order = shard;
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = rng.next_u64() % i;
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b < order.size(); b += batch_size) {
    const std::size_t end = std::min(b + batch_size, order.size());
    batches.emplace_back(order.begin() + b, order.begin() + end);
  }
  return batches;
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix out(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(idx[i], j);
  }
  return out;
}

std::vector<int> gather_labels(const std::vector<int>& y,
                               const std::vector<std::size_t>& idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = y[idx[i]];
  return out;
}

}  // namespace

const char* architecture_name(Architecture a) {
  return a == Architecture::LinearSoftmax ? "linear-softmax" : "two-layer-mlp";
}

std::optional<Architecture> architecture_from_name(const std::string& name) {
  if (name == "linear-softmax") return Architecture::LinearSoftmax;
  if (name == "two-layer-mlp") return Architecture::TwoLayerMlp;
  return std::nullopt;
}

LoraAdapter init_adapter(std::size_t rows, std::size_t cols, std::size_t rank,
                         double alpha, double init_std, Rng& rng) {
  if (rank < 1 || rank > std::min(rows, cols)) {
    throw std::invalid_argument("init_adapter: rank " + std::to_string(rank) +
                                " out of range for " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
  if (alpha <= 0.0) throw std::invalid_argument("init_adapter: alpha must be > 0");
  if (init_std <= 0.0) throw std::invalid_argument("init_adapter: init_std must be > 0");
  LoraAdapter adapter;
  adapter.rank = rank;
  adapter.alpha = alpha;
  adapter.b = Matrix(rows, rank);  // zeros, so the initial update is exactly 0
  adapter.a = sample_gaussian(rank, cols, init_std, rng);
  return adapter;
}

Matrix effective_update(const LoraAdapter& adapter) {
  return (adapter.alpha / static_cast<double>(adapter.rank)) *
         matmul(adapter.b, adapter.a);
}

LoraModel make_model(Architecture arch, std::size_t input_dim,
                     std::size_t classes, std::size_t hidden_dim) {
  if (input_dim == 0 || classes < 2) {
    throw std::invalid_argument("make_model: need input_dim >= 1 and classes >= 2");
  }
  LoraModel model;
  model.architecture = arch;
  if (arch == Architecture::LinearSoftmax) {
    model.layers.push_back({Matrix(classes, input_dim),
                            std::vector<double>(classes, 0.0), std::nullopt});
  } else {
    if (hidden_dim == 0) throw std::invalid_argument("make_model: mlp needs hidden_dim");
    model.layers.push_back({Matrix(hidden_dim, input_dim),
                            std::vector<double>(hidden_dim, 0.0), std::nullopt});
    model.layers.push_back({Matrix(classes, hidden_dim),
                            std::vector<double>(classes, 0.0), std::nullopt});
  }
  return model;
}

void attach_adapter(LoraModel& model, std::size_t layer, std::size_t rank,
                    double alpha, double init_std, Rng& rng) {
  if (layer >= model.layers.size()) {
    throw std::invalid_argument("attach_adapter: no layer " + std::to_string(layer));
  }
  LinearLayer& target = model.layers[layer];
  target.adapter = init_adapter(target.weight.rows(), target.weight.cols(), rank,
                                alpha, init_std, rng);
}

Matrix forward(const LoraModel& model, const Matrix& x) {
  return forward_cached(model, x).preacts.back();
}

LossGrads loss_and_grads(const LoraModel& model, const Matrix& x,
                         const std::vector<int>& y, TrainableSelector selector) {
  std::vector<Matrix> dweights;
  LossGrads out;
  out.loss = backprop_effective(model, x, y, &dweights, nullptr);
  out.layers.resize(model.layers.size());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& adapter = model.layers[l].adapter;
    if (!adapter) continue;
    const double scale = adapter->alpha / static_cast<double>(adapter->rank);
    if (selector != TrainableSelector::OnlyA) {
      out.layers[l].b_grad = scale * matmul(dweights[l], transpose(adapter->a));
    }
    if (selector != TrainableSelector::OnlyB) {
      out.layers[l].a_grad = scale * matmul(transpose(adapter->b), dweights[l]);
    }
  }
  return out;
}

void sgd_step(LoraModel& model, const std::vector<LayerGrads>& grads, double lr) {
  if (grads.size() != model.layers.size()) {
    throw std::invalid_argument("sgd_step: gradient count mismatch");
  }
  if (lr < 0.0) throw std::invalid_argument("sgd_step: negative learning rate");
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& adapter = model.layers[l].adapter;
    const LayerGrads& g = grads[l];
    if ((g.a_grad || g.b_grad) && !adapter) {
      throw std::invalid_argument("sgd_step: gradient for layer without adapter");
    }
    if (g.b_grad) {
      if (g.b_grad->rows() != adapter->b.rows() || g.b_grad->cols() != adapter->b.cols()) {
        throw std::invalid_argument("sgd_step: B gradient shape mismatch");
      }
      adapter->b = adapter->b - lr * (*g.b_grad);
    }
    if (g.a_grad) {
      if (g.a_grad->rows() != adapter->a.rows() || g.a_grad->cols() != adapter->a.cols()) {
        throw std::invalid_argument("sgd_step: A gradient shape mismatch");
      }
      adapter->a = adapter->a - lr * (*g.a_grad);
    }
  }
}

void local_train(LoraModel& model, const Dataset& data,
                 const std::vector<std::size_t>& shard,
                 TrainableSelector selector, int epochs, std::size_t batch_size,
                 double lr, Rng& rng) {
  if (shard.empty()) throw std::invalid_argument("local_train: empty shard");
  if (epochs < 1) throw std::invalid_argument("local_train: epochs must be >= 1");
  if (batch_size == 0) throw std::invalid_argument("local_train: batch_size must be >= 1");
  for (int e = 0; e < epochs; ++e) {
    for (const auto& batch : make_batches(shard, batch_size, rng)) {
      const Matrix x = gather_rows(data.x, batch);
      const std::vector<int> y = gather_labels(data.y, batch);
      sgd_step(model, loss_and_grads(model, x, y, selector).layers, lr);
    }
  }
}

void pretrain_dense(LoraModel& model, const Dataset& data, int epochs,
                    std::size_t batch_size, double lr, Rng& rng) {
  if (data.size() == 0) throw std::invalid_argument("pretrain_dense: empty dataset");
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  for (int e = 0; e < epochs; ++e) {
    for (const auto& batch : make_batches(all, batch_size, rng)) {
      const Matrix x = gather_rows(data.x, batch);
      const std::vector<int> y = gather_labels(data.y, batch);
      std::vector<Matrix> dweights;
      std::vector<std::vector<double>> dbiases;
      backprop_effective(model, x, y, &dweights, &dbiases);
      for (std::size_t l = 0; l < model.layers.size(); ++l) {
        model.layers[l].weight = model.layers[l].weight - lr * dweights[l];
        for (std::size_t j = 0; j < model.layers[l].bias.size(); ++j) {
          model.layers[l].bias[j] -= lr * dbiases[l][j];
        }
      }
    }
  }
}

}  // namespace fedlora
