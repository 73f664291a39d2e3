#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/loss.hpp"
#include "rbcnet/model.hpp"
#include "rbcnet/optim.hpp"
#include "rbcnet/rng.hpp"
#include "rbcnet/tensor.hpp"

namespace rbcnet {

// Glorot uniform on weights, zeros on biases. Conv fans include the kernel
// area. Each parameter tensor draws from its own substream keyed by layer
// index, so widening one layer does not shift any other layer's init.
template <typename T>
void glorot_init(ModelGraph<T>& model, const RngStream& base) {
  for (int i = 0; i < model.layer_count(); ++i) {
    auto& layer = model.layer(i);
    if (!layer.has_params()) continue;
    int fan_in = 0, fan_out = 0;
    if (layer.spec.kind == LayerKind::conv2d) {
      const int area = layer.w.dim(2) * layer.w.dim(3);
      fan_in = layer.w.dim(1) * area;
      fan_out = layer.w.dim(0) * area;
    } else {
      fan_in = layer.w.dim(0);
      fan_out = layer.w.dim(1);
    }
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    RngStream s = base.substream(static_cast<uint64_t>(i));
    for (size_t j = 0; j < layer.w.size(); ++j)
      layer.w.data()[j] = static_cast<T>(s.uniform(-a, a));
    for (size_t j = 0; j < layer.b.size(); ++j) layer.b.data()[j] = T(0);
  }
}

template <typename T>
struct Batch {
  Tensor<T> x;          // (n, C, H, W)
  std::vector<int> y;   // labels in {0,1}
};

// Supplies sample tensors for a set of dataset indices. Keeps the training
// loop independent of how samples are stored (in memory, decoded from disk,
// synthesized).
template <typename T>
using BatchFn = std::function<Batch<T>(const std::vector<size_t>&)>;

// In-memory dataset: one stacked tensor plus labels.
template <typename T>
struct Dataset {
  Tensor<T> x;          // (N, C, H, W)
  std::vector<int> y;

  size_t size() const { return y.size(); }

  Batch<T> gather(const std::vector<size_t>& idx) const {
    if (x.rank() != 4) throw ShapeError("dataset tensor must be rank 4");
    const size_t stride = x.size() / static_cast<size_t>(x.dim(0));
    Tensor<T> bx({static_cast<int>(idx.size()), x.dim(1), x.dim(2), x.dim(3)});
    std::vector<int> by(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= size()) throw RangeError("dataset index out of range");
      std::copy(x.data() + idx[i] * stride, x.data() + (idx[i] + 1) * stride,
                bx.data() + i * stride);
      by[i] = y[idx[i]];
    }
    return {std::move(bx), std::move(by)};
  }

  BatchFn<T> batch_fn() const {
    return [this](const std::vector<size_t>& idx) { return gather(idx); };
  }
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  AdadeltaConfig optimizer;
  uint64_t seed = 0;
  bool shuffle = true;

  // Scratch-training preset: 30 epochs, batch 64, adadelta at lr 1.0.
  static TrainConfig custom_preset() { return TrainConfig{}; }

  // Fine-tuning preset for the baseline: 50 epochs, batch 64, lr 0.01.
  static TrainConfig vgg_preset() {
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.optimizer.lr = 0.01;
    return cfg;
  }
};

struct EpochStats {
  double loss = 0.0;
  double acc = 0.0;
};

inline int predicted_label(double p_positive) { return p_positive >= 0.5; }

// One pass over [0, n) in batches. Shuffle order and dropout draws come from
// substreams keyed by the epoch index, so a (seed, epoch) pair fully
// determines the pass. Loss/accuracy are accumulated over pre-update
// forward outputs, sample-weighted.
template <typename T>
EpochStats train_epoch(ModelGraph<T>& model, AdadeltaOptimizer<T>& opt,
                       size_t n, const BatchFn<T>& batches,
                       const TrainConfig& cfg, int epoch) {
  if (n == 0) throw TrainingError("empty training set");
  if (cfg.batch_size < 1) throw ParameterError("batch_size must be >= 1");
  RngStream base(cfg.seed, 0x7261696eULL);  // training-loop stream family
  RngStream order = base.substream(2 * static_cast<uint64_t>(epoch));
  RngStream dropout = base.substream(2 * static_cast<uint64_t>(epoch) + 1);

  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t{0});
  if (cfg.shuffle) order.shuffle(idx);

  model.set_mode(Mode::train);
  const int softmax_at = model.layer_count() - 1;
  if (model.layer(softmax_at).spec.kind != LayerKind::softmax)
    throw TrainingError("model must end in softmax");

  double loss_sum = 0.0;
  size_t correct = 0;
  for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
    const size_t stop = std::min(n, start + static_cast<size_t>(cfg.batch_size));
    std::vector<size_t> sel(idx.begin() + static_cast<long>(start),
                            idx.begin() + static_cast<long>(stop));
    Batch<T> batch = batches(sel);
    Tape<T> tape;
    Tensor<T> probs = model.forward(batch.x, tape, dropout);
    loss_sum += bce_loss(probs, batch.y) * static_cast<double>(sel.size());
    for (size_t i = 0; i < sel.size(); ++i)
      correct += predicted_label(probs.at2(static_cast<int>(i), 1)) ==
                 batch.y[i];
    Tensor<T> dz = softmax_bce_grad(probs, batch.y);
    auto back = model.backward(tape, std::move(dz), softmax_at - 1);
    opt.step(model, back.grads);
  }
  model.set_mode(Mode::eval);
  return {loss_sum / static_cast<double>(n),
          static_cast<double>(correct) / static_cast<double>(n)};
}

// Eval-mode loss/accuracy over [0, n); dropout is the identity here.
template <typename T>
EpochStats evaluate(ModelGraph<T>& model, size_t n, const BatchFn<T>& batches,
                    int batch_size = 64) {
  if (n == 0) throw TrainingError("empty evaluation set");
  model.set_mode(Mode::eval);
  double loss_sum = 0.0;
  size_t correct = 0;
  for (size_t start = 0; start < n; start += static_cast<size_t>(batch_size)) {
    const size_t stop = std::min(n, start + static_cast<size_t>(batch_size));
    std::vector<size_t> sel(stop - start);
    std::iota(sel.begin(), sel.end(), start);
    Batch<T> batch = batches(sel);
    Tensor<T> probs = model.forward(batch.x);
    loss_sum += bce_loss(probs, batch.y) * static_cast<double>(sel.size());
    for (size_t i = 0; i < sel.size(); ++i)
      correct += predicted_label(probs.at2(static_cast<int>(i), 1)) ==
                 batch.y[i];
  }
  return {loss_sum / static_cast<double>(n),
          static_cast<double>(correct) / static_cast<double>(n)};
}

struct HistoryRow {
  int epoch = 0;  // 1-based
  double train_loss = 0.0, train_acc = 0.0;
  double val_loss = 0.0, val_acc = 0.0;
};

template <typename T>
struct FitResult {
  std::vector<HistoryRow> history;
  int best_epoch = 0;        // 1-based; earliest epoch wins val-acc ties
  double best_val_acc = 0.0;
  ModelGraph<T> best_model;  // parameters as of best_epoch
};

// Full training run with per-epoch validation. The model with the highest
// validation accuracy is kept (earliest epoch on ties) and also handed to
// `on_best` when provided, e.g. to write a checkpoint.
template <typename T>
FitResult<T> fit(ModelGraph<T>& model, size_t n_train,
                 const BatchFn<T>& train_batches, size_t n_val,
                 const BatchFn<T>& val_batches, const TrainConfig& cfg,
                 const std::function<void(const ModelGraph<T>&, int, double)>&
                     on_best = nullptr) {
  if (cfg.epochs < 1) throw ParameterError("epochs must be >= 1");
  AdadeltaOptimizer<T> opt(cfg.optimizer);
  FitResult<T> res;
  res.best_val_acc = -1.0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochStats tr = train_epoch(model, opt, n_train, train_batches, cfg, epoch);
    EpochStats va = evaluate(model, n_val, val_batches, cfg.batch_size);
    res.history.push_back({epoch, tr.loss, tr.acc, va.loss, va.acc});
    if (va.acc > res.best_val_acc) {
      res.best_val_acc = va.acc;
      res.best_epoch = epoch;
      res.best_model = model;
      if (on_best) on_best(model, epoch, va.acc);
    }
  }
  return res;
}

}  // namespace rbcnet
