#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/rng.hpp"

namespace rbcnet {

// Dense row-major tensor. Activations use (batch, channel, height, width);
// conv kernels use (out_channel, in_channel, kH, kW). Storage type is float
// in the production path; double instantiations back the tight gradient
// checks. Reductions accumulate in double regardless of storage type.
template <typename T = float>
class Tensor {
 public:
  Tensor() = default;

  Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(checked_size(shape_), fill);
  }

  static Tensor from_data(std::vector<int> shape, std::vector<T> data) {
    Tensor t;
    if (checked_size(shape) != data.size())
      throw ShapeError("data length does not match shape product");
    t.shape_ = std::move(shape);
    t.data_ = std::move(data);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  T& at2(int i, int j) { return data_[idx2(i, j)]; }
  const T& at2(int i, int j) const { return data_[idx2(i, j)]; }
  T& at4(int n, int c, int h, int w) { return data_[idx4(n, c, h, w)]; }
  const T& at4(int n, int c, int h, int w) const {
    return data_[idx4(n, c, h, w)];
  }

  size_t idx2(int i, int j) const {
    return static_cast<size_t>(i) * shape_[1] + j;
  }
  size_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) *
               shape_[3] +
           w;
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (checked_size(shape) != data_.size())
      throw ShapeError("reshape changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  double sum() const {
    double acc = 0.0;
    for (const T& v : data_) acc += static_cast<double>(v);
    return acc;
  }

  double mean() const {
    if (data_.empty()) throw ShapeError("mean of empty tensor");
    return sum() / static_cast<double>(data_.size());
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape_.size(); ++i)
      os << (i ? "," : "") << shape_[i];
    os << ")";
    return os.str();
  }

 private:
  static size_t checked_size(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("empty shape");
    size_t n = 1;
    for (int d : shape) {
      if (d < 1) throw ShapeError("dimension must be >= 1");
      n *= static_cast<size_t>(d);
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

template <typename T>
Tensor<T> tensor_new(std::vector<int> shape, T fill) {
  return Tensor<T>(std::move(shape), fill);
}

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> data(t.size());
  for (size_t i = 0; i < t.size(); ++i)
    data[i] = static_cast<To>(t[i]);
  return Tensor<To>::from_data(t.shape(), std::move(data));
}

template <typename T>
void fill_uniform(Tensor<T>& t, RngStream& stream, double lo, double hi) {
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(stream.uniform(lo, hi));
}

// rng_uniform in the module contract: n values in [lo, hi).
inline std::vector<double> rng_uniform(RngStream& stream, double lo, double hi,
                                       size_t n) {
  return stream.uniform_seq(lo, hi, n);
}

}  // namespace rbcnet
