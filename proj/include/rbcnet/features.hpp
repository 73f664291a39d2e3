#pragma once

#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/model.hpp"
#include "rbcnet/tensor.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// Deep-feature extraction: rows are the post-activation output of the
// network's penultimate dense layer (the last dense before the 2-way
// classifier), captured before any dropout. Labels ride along as +/-1 for
// the SVM stage.
// ---------------------------------------------------------------------------

struct FeatureMatrix {
  Tensor<float> x;       // (N, D)
  std::vector<int> y;    // +1 / -1 per row
};

// Index of the feature tap: the second-to-last dense layer of the graph.
template <typename T>
int feature_layer_index(const ModelGraph<T>& model) {
  std::vector<int> dense;
  for (int i = 0; i < model.layer_count(); ++i)
    if (model.layer(i).spec.kind == LayerKind::dense) dense.push_back(i);
  if (dense.size() < 2)
    throw ParameterError(
        "feature extraction needs a dense layer before the classifier; graph "
        "has " +
        std::to_string(dense.size()) + " dense layer(s)");
  return dense[dense.size() - 2];
}

// Runs the model in eval mode over `x` in batches and captures the feature
// activations. Labels are 0/1 and come out as -1/+1.
template <typename T>
FeatureMatrix extract_features(ModelGraph<T>& model, const Tensor<float>& x,
                               const std::vector<int>& labels,
                               int batch_size = 64) {
  if (x.rank() != 4)
    throw ShapeError("extract_features expects an (N,C,H,W) batch");
  if (static_cast<size_t>(x.dim(0)) != labels.size())
    throw ShapeError("feature labels must match batch rows");
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");

  const int tap = feature_layer_index(model);
  const int n = x.dim(0);
  const size_t sample = x.size() / static_cast<size_t>(n);

  model.set_mode(Mode::eval);
  FeatureMatrix out;
  out.y.resize(labels.size());
  for (size_t i = 0; i < labels.size(); ++i)
    out.y[i] = labels[i] == 1 ? 1 : -1;

  RngStream unused;  // eval-mode forward draws nothing
  for (int at = 0; at < n; at += batch_size) {
    const int take = std::min(batch_size, n - at);
    Tensor<float> chunk({take, x.dim(1), x.dim(2), x.dim(3)});
    std::copy(x.data() + static_cast<size_t>(at) * sample,
              x.data() + static_cast<size_t>(at + take) * sample,
              chunk.data());
    Tensor<T> input = tensor_cast<T>(chunk);
    Tape<T> tape;
    model.forward(input, tape, unused);
    const Tensor<T>& feats = tape.act[tap];
    if (out.x.rank() == 0)
      out.x = Tensor<float>({n, feats.dim(1)});
    for (int r = 0; r < take; ++r)
      for (int d = 0; d < feats.dim(1); ++d)
        out.x.at2(at + r, d) = static_cast<float>(feats.at2(r, d));
  }
  return out;
}

}  // namespace rbcnet
