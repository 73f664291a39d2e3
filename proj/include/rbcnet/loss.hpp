#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/tensor.hpp"

namespace rbcnet {

// Binary cross-entropy over the positive-class probability of a (N,2)
// probability matrix. Probabilities are clamped to [1e-7, 1-1e-7] so a
// saturated prediction yields a large finite loss instead of inf.
template <typename T>
double bce_loss(const Tensor<T>& probs, const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.dim(1) != 2)
    throw ShapeError("bce_loss expects (N,2) probabilities, got " +
                     probs.shape_str());
  const int n = probs.dim(0);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("bce_loss label count mismatch");
  const double eps = 1e-7;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y != 0 && y != 1) throw RangeError("labels must be 0 or 1");
    double p = std::clamp(static_cast<double>(probs.at2(i, 1)), eps, 1.0 - eps);
    total += y == 1 ? -std::log(p) : -std::log(1.0 - p);
  }
  return total / n;
}

// Gradient of bce_loss w.r.t. the logits feeding the 2-way softmax that
// produced `probs`: (p - onehot(y)) / N. Fusing the two avoids the
// cancellation-prone p*(1-p) division of the chained form.
template <typename T>
Tensor<T> softmax_bce_grad(const Tensor<T>& probs,
                           const std::vector<int>& labels) {
  if (probs.rank() != 2 || probs.dim(1) != 2)
    throw ShapeError("softmax_bce_grad expects (N,2) probabilities");
  const int n = probs.dim(0);
  if (static_cast<int>(labels.size()) != n)
    throw ShapeError("softmax_bce_grad label count mismatch");
  Tensor<T> dz({n, 2});
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<size_t>(i)];
    if (y != 0 && y != 1) throw RangeError("labels must be 0 or 1");
    dz.at2(i, 0) = static_cast<T>(
        (static_cast<double>(probs.at2(i, 0)) - (y == 0 ? 1.0 : 0.0)) / n);
    dz.at2(i, 1) = static_cast<T>(
        (static_cast<double>(probs.at2(i, 1)) - (y == 1 ? 1.0 : 0.0)) / n);
  }
  return dz;
}

}  // namespace rbcnet
