#pragma once

#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/layers.hpp"
#include "rbcnet/rng.hpp"
#include "rbcnet/tensor.hpp"

namespace rbcnet {

enum class LayerKind { conv2d, maxpool2d, relu, dense, dropout, flatten, softmax };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::maxpool2d: return "maxpool2d";
    case LayerKind::relu: return "relu";
    case LayerKind::dense: return "dense";
    case LayerKind::dropout: return "dropout";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind;
  int width = 0;       // conv out-channels or dense output neurons
  int kernel = 3;      // conv kernel size; both topologies use 3x3
  double rate = 0.5;   // dropout keep-out probability
  bool relu_after = false;  // fused activation on conv/dense

  static LayerSpec conv(int channels, bool relu = true) {
    return {LayerKind::conv2d, channels, 3, 0.5, relu};
  }
  static LayerSpec pool() { return {LayerKind::maxpool2d}; }
  static LayerSpec relu_layer() { return {LayerKind::relu}; }
  static LayerSpec dense(int width, bool relu = false) {
    return {LayerKind::dense, width, 3, 0.5, relu};
  }
  static LayerSpec dropout(double rate) {
    return {LayerKind::dropout, 0, 3, rate, false};
  }
  static LayerSpec flatten() { return {LayerKind::flatten}; }
  static LayerSpec softmax() { return {LayerKind::softmax}; }
};

template <typename T>
struct Layer {
  LayerSpec spec;
  std::string name;
  Tensor<T> w, b;      // empty for parameterless kinds
  bool trainable = true;

  bool has_params() const {
    return spec.kind == LayerKind::conv2d || spec.kind == LayerKind::dense;
  }
};

// Per-layer activation record from a forward pass. Kept outside the graph so
// eval-mode forward stays const and safe for concurrent readers.
template <typename T>
struct Tape {
  Tensor<T> input;
  std::vector<Tensor<T>> pre;   // pre-activation, only for fused-relu layers
  std::vector<Tensor<T>> act;   // layer outputs
  std::vector<std::vector<int64_t>> argmax;  // per pool layer
  std::vector<std::vector<T>> mask;          // per dropout layer
};

template <typename T>
struct LayerGrads {
  Tensor<T> dw, db;
  bool present = false;
};

template <typename T>
struct BackwardResult {
  std::vector<LayerGrads<T>> grads;  // aligned with layers
  Tensor<T> dinput;
};

// Ordered layer sequence with named parameters and per-layer trainability.
// Both built topologies end in a 2-way softmax.
template <typename T = float>
class ModelGraph {
 public:
  ModelGraph() = default;
  ModelGraph(int channels, int height, int width)
      : in_shape_({channels, height, width}) {}

  void add(const LayerSpec& spec, std::string name = "") {
    Layer<T> layer;
    layer.spec = spec;
    layer.name = name.empty() ? default_name(spec.kind) : std::move(name);
    auto cur = layers_.empty() ? in_shape_ : out_shapes_.back();
    switch (spec.kind) {
      case LayerKind::conv2d: {
        if (cur.size() != 3) throw ShapeError("conv2d needs (C,H,W) input");
        layer.w = Tensor<T>({spec.width, cur[0], spec.kernel, spec.kernel});
        layer.b = Tensor<T>({spec.width});
        cur[0] = spec.width;
        break;
      }
      case LayerKind::maxpool2d: {
        if (cur.size() != 3) throw ShapeError("maxpool2d needs (C,H,W) input");
        if (cur[1] < 2 || cur[2] < 2)
          throw ShapeError("maxpool2d needs spatial dims >= 2");
        cur[1] /= 2;
        cur[2] /= 2;
        break;
      }
      case LayerKind::flatten: {
        if (cur.size() != 3) throw ShapeError("flatten needs (C,H,W) input");
        cur = {cur[0] * cur[1] * cur[2]};
        break;
      }
      case LayerKind::dense: {
        if (cur.size() != 1) throw ShapeError("dense needs flattened input");
        layer.w = Tensor<T>({cur[0], spec.width});
        layer.b = Tensor<T>({spec.width});
        cur = {spec.width};
        break;
      }
      case LayerKind::softmax: {
        if (cur.size() != 1 || cur[0] != 2)
          throw ShapeError("softmax head requires 2 logits");
        break;
      }
      case LayerKind::relu:
      case LayerKind::dropout:
        break;
    }
    layers_.push_back(std::move(layer));
    out_shapes_.push_back(cur);
  }

  int layer_count() const { return static_cast<int>(layers_.size()); }
  Layer<T>& layer(int i) { return layers_.at(static_cast<size_t>(i)); }
  const Layer<T>& layer(int i) const { return layers_.at(static_cast<size_t>(i)); }
  const std::vector<int>& input_shape() const { return in_shape_; }
  const std::vector<int>& layer_output_shape(int i) const {
    return out_shapes_.at(static_cast<size_t>(i));
  }

  Mode mode() const { return mode_; }
  void set_mode(Mode m) { mode_ = m; }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& l : layers_) n += l.w.size() + l.b.size();
    return n;
  }

  // Inference-mode forward; dropout is the identity, no tape is recorded.
  Tensor<T> forward(const Tensor<T>& x) const {
    if (mode_ != Mode::eval)
      throw ParameterError("tapeless forward requires eval mode");
    RngStream unused;
    return run_forward(x, nullptr, unused);
  }

  Tensor<T> forward(const Tensor<T>& x, Tape<T>& tape,
                    RngStream& dropout_stream) const {
    return run_forward(x, &tape, dropout_stream);
  }

  // Backpropagates dy, the gradient w.r.t. the output of layer `from`
  // (default: the final layer), down to the input.
  BackwardResult<T> backward(const Tape<T>& tape, Tensor<T> dy,
                             int from = -1) const {
    const int last = from < 0 ? layer_count() - 1 : from;
    BackwardResult<T> res;
    res.grads.resize(layers_.size());
    for (int i = last; i >= 0; --i) {
      const Layer<T>& l = layers_[static_cast<size_t>(i)];
      const Tensor<T>& input =
          i == 0 ? tape.input : tape.act[static_cast<size_t>(i - 1)];
      if (l.spec.relu_after)
        dy = relu_backward(tape.pre[static_cast<size_t>(i)], dy);
      switch (l.spec.kind) {
        case LayerKind::conv2d: {
          auto g = conv2d_backward(input, l.w, dy);
          res.grads[static_cast<size_t>(i)] = {std::move(g.dw),
                                               std::move(g.db), true};
          dy = std::move(g.dx);
          break;
        }
        case LayerKind::dense: {
          auto g = dense_backward(input, l.w, dy);
          res.grads[static_cast<size_t>(i)] = {std::move(g.dw),
                                               std::move(g.db), true};
          dy = std::move(g.dx);
          break;
        }
        case LayerKind::maxpool2d:
          dy = maxpool2d_backward(input.shape(),
                                  tape.argmax[static_cast<size_t>(i)], dy);
          break;
        case LayerKind::relu:
          dy = relu_backward(input, dy);
          break;
        case LayerKind::dropout:
          dy = dropout_backward(tape.mask[static_cast<size_t>(i)], dy);
          break;
        case LayerKind::flatten:
          dy = dy.reshaped(input.shape());
          break;
        case LayerKind::softmax:
          dy = softmax2_backward(tape.act[static_cast<size_t>(i)], dy);
          break;
      }
    }
    res.dinput = std::move(dy);
    return res;
  }

  // Marks layers [lo, hi] (inclusive indices) as frozen or trainable.
  // Forward/backward are unaffected; the optimizer skips frozen parameters.
  void set_trainable_range(int lo, int hi, bool trainable) {
    if (lo < 0 || hi >= layer_count() || lo > hi)
      throw ParameterError("layer range out of bounds");
    for (int i = lo; i <= hi; ++i)
      layers_[static_cast<size_t>(i)].trainable = trainable;
  }

  std::vector<std::string> param_names() const {
    std::vector<std::string> names;
    for (const auto& l : layers_) {
      if (!l.has_params()) continue;
      names.push_back(l.name + ".weight");
      names.push_back(l.name + ".bias");
    }
    return names;
  }

  Tensor<T>& param(const std::string& name) {
    for (auto& l : layers_) {
      if (name == l.name + ".weight") return l.w;
      if (name == l.name + ".bias") return l.b;
    }
    throw ParameterError("no parameter named " + name);
  }

  bool param_trainable(const std::string& name) const {
    for (const auto& l : layers_) {
      if (name == l.name + ".weight" || name == l.name + ".bias")
        return l.trainable;
    }
    throw ParameterError("no parameter named " + name);
  }

  std::string topology() const {
    std::ostringstream os;
    os << "input=" << in_shape_[0] << "x" << in_shape_[1] << "x" << in_shape_[2];
    for (const auto& l : layers_) {
      os << ";" << l.name << "=" << layer_kind_name(l.spec.kind);
      if (l.spec.kind == LayerKind::conv2d)
        os << l.spec.kernel << "x" << l.spec.kernel << "/" << l.spec.width;
      if (l.spec.kind == LayerKind::dense) os << "/" << l.spec.width;
      if (l.spec.kind == LayerKind::dropout) os << "/" << l.spec.rate;
      if (l.spec.relu_after) os << "+relu";
    }
    return os.str();
  }

 private:
  std::string default_name(LayerKind kind) {
    int n = 1;
    for (const auto& l : layers_)
      if (l.spec.kind == kind) ++n;
    switch (kind) {
      case LayerKind::conv2d: return "conv" + std::to_string(n);
      case LayerKind::maxpool2d: return "pool" + std::to_string(n);
      case LayerKind::relu: return "relu" + std::to_string(n);
      case LayerKind::dense: return "dense" + std::to_string(n);
      case LayerKind::dropout: return "dropout" + std::to_string(n);
      case LayerKind::flatten: return "flatten";
      case LayerKind::softmax: return "softmax";
    }
    return "layer" + std::to_string(n);
  }

  Tensor<T> run_forward(const Tensor<T>& x, Tape<T>* tape,
                        RngStream& dropout_stream) const {
    if (x.rank() != 4 || x.dim(1) != in_shape_[0] || x.dim(2) != in_shape_[1] ||
        x.dim(3) != in_shape_[2])
      throw ShapeError("model input must be (batch," +
                       std::to_string(in_shape_[0]) + "," +
                       std::to_string(in_shape_[1]) + "," +
                       std::to_string(in_shape_[2]) + "), got " + x.shape_str());
    if (tape) {
      tape->input = x;
      tape->pre.assign(layers_.size(), Tensor<T>());
      tape->act.assign(layers_.size(), Tensor<T>());
      tape->argmax.assign(layers_.size(), {});
      tape->mask.assign(layers_.size(), {});
    }
    Tensor<T> cur = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
      const Layer<T>& l = layers_[i];
      switch (l.spec.kind) {
        case LayerKind::conv2d:
          cur = conv2d_forward(cur, l.w, l.b);
          break;
        case LayerKind::dense:
          cur = dense_forward(cur, l.w, l.b);
          break;
        case LayerKind::maxpool2d: {
          auto r = maxpool2d_forward(cur);
          if (tape) tape->argmax[i] = std::move(r.argmax);
          cur = std::move(r.y);
          break;
        }
        case LayerKind::relu:
          cur = relu_forward(cur);
          break;
        case LayerKind::dropout:
          if (mode_ == Mode::train) {
            auto r = dropout_forward(cur, l.spec.rate, mode_, dropout_stream);
            if (tape) tape->mask[i] = std::move(r.mask);
            cur = std::move(r.y);
          }
          break;
        case LayerKind::flatten:
          cur = flatten_forward(cur);
          break;
        case LayerKind::softmax:
          cur = softmax2_forward(cur);
          break;
      }
      if (l.spec.relu_after) {
        if (tape) tape->pre[i] = cur;
        cur = relu_forward(cur);
      }
      if (tape) tape->act[i] = cur;
    }
    return cur;
  }

  std::vector<int> in_shape_;
  std::vector<Layer<T>> layers_;
  std::vector<std::vector<int>> out_shapes_;
  Mode mode_ = Mode::eval;
};

using ModelGraphF = ModelGraph<float>;

// ---------------------------------------------------------------------------
// Topology builders.
// ---------------------------------------------------------------------------

// 19-layer custom net: 4 blocks of [conv, conv, pool] with channel widths
// 32,32,64,64,128,128,256,256, then flatten, two dense-256 + dropout-0.5
// blocks, dense-2 and a 2-way softmax. At 200x200 input the flatten width is
// 256*12*12 = 36864.
template <typename T = float>
ModelGraph<T> build_custom_net(int input_size = 200) {
  ModelGraph<T> m(3, input_size, input_size);
  const int widths[8] = {32, 32, 64, 64, 128, 128, 256, 256};
  for (int block = 0; block < 4; ++block) {
    m.add(LayerSpec::conv(widths[2 * block]));
    m.add(LayerSpec::conv(widths[2 * block + 1]));
    m.add(LayerSpec::pool());
  }
  m.add(LayerSpec::flatten());
  m.add(LayerSpec::dense(256, true));
  m.add(LayerSpec::dropout(0.5));
  m.add(LayerSpec::dense(256, true));
  m.add(LayerSpec::dropout(0.5));
  m.add(LayerSpec::dense(2));
  m.add(LayerSpec::softmax());
  return m;
}

// Reduced variant of the custom topology for small inputs: two [conv, conv,
// pool] blocks and a narrower head. Used for desk-scale runs.
template <typename T = float>
ModelGraph<T> build_custom_net_small(int input_size = 32, int base_width = 8,
                                     int head_width = 64) {
  ModelGraph<T> m(3, input_size, input_size);
  const int widths[4] = {base_width, base_width, 2 * base_width, 2 * base_width};
  for (int block = 0; block < 2; ++block) {
    m.add(LayerSpec::conv(widths[2 * block]));
    m.add(LayerSpec::conv(widths[2 * block + 1]));
    m.add(LayerSpec::pool());
  }
  m.add(LayerSpec::flatten());
  m.add(LayerSpec::dense(head_width, true));
  m.add(LayerSpec::dropout(0.5));
  m.add(LayerSpec::dense(head_width, true));
  m.add(LayerSpec::dropout(0.5));
  m.add(LayerSpec::dense(2));
  m.add(LayerSpec::softmax());
  return m;
}

// VGG16-style baseline: 13 conv layers in groups 64,64 | 128,128 | 256x3 |
// 512x3 | 512x3, a 2x2 max pool after each group, then flatten (512*6*6 =
// 18432 at 200x200 input), dense-1024 + dropout-0.5, dense-2, softmax.
template <typename T = float>
ModelGraph<T> build_vgg_baseline(int input_size = 200) {
  ModelGraph<T> m(3, input_size, input_size);
  const std::vector<std::vector<int>> groups = {
      {64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
  for (const auto& group : groups) {
    for (int width : group) m.add(LayerSpec::conv(width));
    m.add(LayerSpec::pool());
  }
  m.add(LayerSpec::flatten());
  m.add(LayerSpec::dense(1024, true));
  m.add(LayerSpec::dropout(0.5));
  m.add(LayerSpec::dense(2));
  m.add(LayerSpec::softmax());
  return m;
}

// ---------------------------------------------------------------------------
// Baseline freeze numbering. The published figure labels the baseline L1-L20
// without printing the enumeration; this table is the declared convention:
// L1..L18 are the convolution and pooling layers in forward order, L19 is
// the dense-1024 head layer and L20 the dense-2 output layer. Flatten,
// dropout and softmax carry no parameters and are not numbered. Under this
// numbering "freeze L1-L16" trains exactly the last four layers L17-L20
// (conv13, pool5, dense-1024, dense-2).
// ---------------------------------------------------------------------------

inline int vgg_graph_index(int l) {
  if (l < 1 || l > 20) throw ParameterError("baseline layer labels are L1..L20");
  if (l <= 18) return l - 1;  // convs and pools
  if (l == 19) return 19;     // dense-1024 (flatten sits at graph index 18)
  return 21;                  // dense-2 (dropout sits at graph index 20)
}

// Parses "none", "all", or "La-Lb" into an inclusive L-label range.
inline std::optional<std::pair<int, int>> parse_freeze_range(
    const std::string& text) {
  if (text == "none" || text.empty()) return std::nullopt;
  if (text == "all") return std::make_pair(1, 20);
  unsigned lo = 0, hi = 0;
  if (std::sscanf(text.c_str(), "L%u-L%u", &lo, &hi) == 2 && lo >= 1 &&
      hi >= lo && hi <= 20)
    return std::make_pair(static_cast<int>(lo), static_cast<int>(hi));
  throw ParameterError("bad freeze range '" + text + "' (use none, all, La-Lb)");
}

template <typename T>
void freeze_vgg_layers(ModelGraph<T>& model, const std::string& range_text) {
  auto range = parse_freeze_range(range_text);
  if (!range) return;
  model.set_trainable_range(vgg_graph_index(range->first),
                            vgg_graph_index(range->second), false);
}

}  // namespace rbcnet
