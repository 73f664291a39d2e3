#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/model.hpp"
#include "rbcnet/tensor.hpp"

namespace rbcnet {

struct AdadeltaConfig {
  double rho = 0.95;
  double eps = 1e-6;
  double lr = 1.0;
};

template <typename T>
struct AdadeltaSlot {
  Tensor<T> eg2, edx2;  // running averages of g^2 and update^2
};

// One elementwise update. With a zero gradient the parameter is unchanged
// while the accumulators decay toward zero.
template <typename T>
void adadelta_step(Tensor<T>& param, const Tensor<T>& grad,
                   AdadeltaSlot<T>& slot, const AdadeltaConfig& cfg) {
  if (grad.shape() != param.shape())
    throw ShapeError("adadelta gradient shape " + grad.shape_str() +
                     " != parameter shape " + param.shape_str());
  if (slot.eg2.size() == 0) {
    slot.eg2 = Tensor<T>(param.shape());
    slot.edx2 = Tensor<T>(param.shape());
  }
  if (slot.eg2.shape() != param.shape())
    throw ShapeError("adadelta state shape mismatch");
  T* p = param.data();
  const T* g = grad.data();
  T* eg2 = slot.eg2.data();
  T* edx2 = slot.edx2.data();
  const double rho = cfg.rho;
  for (size_t i = 0; i < param.size(); ++i) {
    const double gi = static_cast<double>(g[i]);
    const double e2 = rho * static_cast<double>(eg2[i]) + (1.0 - rho) * gi * gi;
    const double dx = -(std::sqrt(static_cast<double>(edx2[i]) + cfg.eps) /
                        std::sqrt(e2 + cfg.eps)) *
                      gi;
    eg2[i] = static_cast<T>(e2);
    edx2[i] = static_cast<T>(rho * static_cast<double>(edx2[i]) +
                             (1.0 - rho) * dx * dx);
    p[i] += static_cast<T>(cfg.lr * dx);
  }
}

// Keeps one accumulator pair per parameter tensor of a model and applies
// adadelta_step to every trainable parameter. Frozen layers keep their
// accumulators untouched as well, so freeze/unfreeze is side-effect free.
template <typename T>
class AdadeltaOptimizer {
 public:
  AdadeltaOptimizer() = default;
  explicit AdadeltaOptimizer(AdadeltaConfig cfg) : cfg_(cfg) {}

  const AdadeltaConfig& config() const { return cfg_; }

  void step(ModelGraph<T>& model, const std::vector<LayerGrads<T>>& grads) {
    if (static_cast<int>(grads.size()) != model.layer_count())
      throw ShapeError("gradient list does not match layer count");
    slots_.resize(grads.size() * 2);
    for (int i = 0; i < model.layer_count(); ++i) {
      auto& layer = model.layer(i);
      if (!layer.has_params() || !layer.trainable) continue;
      const auto& g = grads[static_cast<size_t>(i)];
      if (!g.present)
        throw ShapeError("missing gradient for layer " + layer.name);
      adadelta_step(layer.w, g.dw, slots_[static_cast<size_t>(2 * i)], cfg_);
      adadelta_step(layer.b, g.db, slots_[static_cast<size_t>(2 * i + 1)],
                    cfg_);
    }
  }

  // Accumulators keyed by parameter name, for checkpointing.
  std::vector<std::pair<std::string, const Tensor<T>*>> state_tensors(
      const ModelGraph<T>& model) const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (int i = 0; i < model.layer_count(); ++i) {
      const auto& layer = model.layer(i);
      if (!layer.has_params()) continue;
      const size_t wi = static_cast<size_t>(2 * i), bi = wi + 1;
      if (slots_.size() <= bi || slots_[wi].eg2.size() == 0) continue;
      out.emplace_back(layer.name + ".weight.eg2", &slots_[wi].eg2);
      out.emplace_back(layer.name + ".weight.edx2", &slots_[wi].edx2);
      out.emplace_back(layer.name + ".bias.eg2", &slots_[bi].eg2);
      out.emplace_back(layer.name + ".bias.edx2", &slots_[bi].edx2);
    }
    return out;
  }

  std::vector<AdadeltaSlot<T>>& slots() { return slots_; }

 private:
  AdadeltaConfig cfg_;
  std::vector<AdadeltaSlot<T>> slots_;
};

}  // namespace rbcnet
