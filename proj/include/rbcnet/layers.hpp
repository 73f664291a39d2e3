#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/rng.hpp"
#include "rbcnet/tensor.hpp"
#include "rbcnet/threads.hpp"

namespace rbcnet {

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// conv2d: true convolution (kernel applied through a 180-degree turn, so a
// unit impulse reproduces the kernel), stride 1, "same" zero padding, odd
// square kernels. Input (N,C,H,W), kernel (OC,IC,kH,kW), bias (OC). Output
// spatial dims equal input dims.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>& b) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d expects rank-4 input and kernel");
  if (x.dim(1) != w.dim(1))
    throw ShapeError("conv2d channel mismatch: input " + x.shape_str() +
                     " vs kernel " + w.shape_str());
  const int kh = w.dim(2), kw = w.dim(3);
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ShapeError("conv2d requires odd kernel dims for same padding");
  if (b.size() != static_cast<size_t>(w.dim(0)))
    throw ShapeError("conv2d bias length must equal out-channel count");

  const int n = x.dim(0), ic = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int oc = w.dim(0);
  const int ph = kh / 2, pw = kw / 2;
  Tensor<T> y({n, oc, h, wd});

  parallel_for(static_cast<size_t>(n) * oc, [&](size_t job) {
    const int in = static_cast<int>(job) / oc;
    const int o = static_cast<int>(job) % oc;
    T* yp = y.data() + y.idx4(in, o, 0, 0);
    const T bias = b[static_cast<size_t>(o)];
    for (int i = 0; i < h * wd; ++i) yp[i] = bias;
    for (int c = 0; c < ic; ++c) {
      const T* xp = x.data() + x.idx4(in, c, 0, 0);
      const T* wp = w.data() + w.idx4(o, c, 0, 0);
      for (int yy = 0; yy < h; ++yy) {
        T* yrow = yp + static_cast<size_t>(yy) * wd;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = yy + ky - ph;
          if (iy < 0 || iy >= h) continue;
          const T* xrow = xp + static_cast<size_t>(iy) * wd;
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = wp[(kh - 1 - ky) * kw + (kw - 1 - kx)];
            const int shift = kx - pw;
            const int x0 = std::max(0, -shift);
            const int x1 = std::min(wd, wd - shift);
            for (int xx = x0; xx < x1; ++xx)
              yrow[xx] += wv * xrow[xx + shift];
          }
        }
      }
    }
  });
  return y;
}

template <typename T>
struct Conv2dGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& x, const Tensor<T>& w,
                               const Tensor<T>& dy) {
  const int n = x.dim(0), ic = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ph = kh / 2, pw = kw / 2;
  if (dy.shape() != std::vector<int>({n, oc, h, wd}))
    throw ShapeError("conv2d_backward upstream shape mismatch");

  Conv2dGrads<T> g{Tensor<T>({n, ic, h, wd}), Tensor<T>(w.shape()),
                   Tensor<T>({oc})};

  // db[o] = sum over (n, h, w) of dy
  parallel_for(static_cast<size_t>(oc), [&](size_t o) {
    double acc = 0.0;
    for (int in = 0; in < n; ++in) {
      const T* dyp = dy.data() + dy.idx4(in, static_cast<int>(o), 0, 0);
      for (int i = 0; i < h * wd; ++i) acc += static_cast<double>(dyp[i]);
    }
    g.db[o] = static_cast<T>(acc);
  });

  // dx: adjoint of the forward stencil, scattering dy through the same taps
  parallel_for(static_cast<size_t>(n) * ic, [&](size_t job) {
    const int in = static_cast<int>(job) / ic;
    const int c = static_cast<int>(job) % ic;
    T* dxp = g.dx.data() + g.dx.idx4(in, c, 0, 0);
    for (int o = 0; o < oc; ++o) {
      const T* dyp = dy.data() + dy.idx4(in, o, 0, 0);
      const T* wp = w.data() + w.idx4(o, c, 0, 0);
      for (int yy = 0; yy < h; ++yy) {
        const T* dyrow = dyp + static_cast<size_t>(yy) * wd;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = yy + ky - ph;
          if (iy < 0 || iy >= h) continue;
          T* dxrow = dxp + static_cast<size_t>(iy) * wd;
          for (int kx = 0; kx < kw; ++kx) {
            const T wv = wp[(kh - 1 - ky) * kw + (kw - 1 - kx)];
            const int shift = kx - pw;
            const int x0 = std::max(0, -shift);
            const int x1 = std::min(wd, wd - shift);
            for (int xx = x0; xx < x1; ++xx)
              dxrow[xx + shift] += wv * dyrow[xx];
          }
        }
      }
    }
  });

  // dw: each tap accumulates the x-window/dy product that used it in forward
  parallel_for(static_cast<size_t>(oc), [&](size_t oj) {
    const int o = static_cast<int>(oj);
    for (int c = 0; c < ic; ++c) {
      T* dwp = g.dw.data() + g.dw.idx4(o, c, 0, 0);
      for (int in = 0; in < n; ++in) {
        const T* xp = x.data() + x.idx4(in, c, 0, 0);
        const T* dyp = dy.data() + dy.idx4(in, o, 0, 0);
        for (int ky = 0; ky < kh; ++ky) {
          for (int kx = 0; kx < kw; ++kx) {
            const int shift = kx - pw;
            T acc = T(0);
            for (int yy = 0; yy < h; ++yy) {
              const int iy = yy + ky - ph;
              if (iy < 0 || iy >= h) continue;
              const T* xrow = xp + static_cast<size_t>(iy) * wd;
              const T* dyrow = dyp + static_cast<size_t>(yy) * wd;
              const int x0 = std::max(0, -shift);
              const int x1 = std::min(wd, wd - shift);
              for (int xx = x0; xx < x1; ++xx)
                acc += xrow[xx + shift] * dyrow[xx];
            }
            dwp[(kh - 1 - ky) * kw + (kw - 1 - kx)] += acc;
          }
        }
      }
    }
  });
  return g;
}

// ---------------------------------------------------------------------------
// maxpool2d: 2x2 windows, stride 2, odd trailing rows/columns dropped
// (floor semantics). Backward routes each upstream gradient entirely to the
// window argmax; ties resolve to the first element in scan order.
// ---------------------------------------------------------------------------

template <typename T>
struct PoolResult {
  Tensor<T> y;
  std::vector<int64_t> argmax;  // flat input index per output element
};

template <typename T>
PoolResult<T> maxpool2d_forward(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("maxpool2d expects rank-4 input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) throw ShapeError("maxpool2d needs spatial dims >= 2");
  const int oh = h / 2, ow = w / 2;
  PoolResult<T> r{Tensor<T>({n, c, oh, ow}),
                  std::vector<int64_t>(static_cast<size_t>(n) * c * oh * ow)};
  size_t out = 0;
  for (int in = 0; in < n; ++in)
    for (int ch = 0; ch < c; ++ch)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          int64_t best_idx = -1;
          T best = T(0);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const size_t idx = x.idx4(in, ch, 2 * yy + dy, 2 * xx + dx);
              if (best_idx < 0 || x[idx] > best) {
                best = x[idx];
                best_idx = static_cast<int64_t>(idx);
              }
            }
          r.y[out] = best;
          r.argmax[out] = best_idx;
          ++out;
        }
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const std::vector<int>& input_shape,
                             const std::vector<int64_t>& argmax,
                             const Tensor<T>& dy) {
  Tensor<T> dx(input_shape);
  if (argmax.size() != dy.size())
    throw ShapeError("maxpool2d_backward argmax length mismatch");
  for (size_t i = 0; i < dy.size(); ++i)
    dx[static_cast<size_t>(argmax[i])] += dy[i];
  return dx;
}

// ---------------------------------------------------------------------------
// relu: elementwise max(0, x). Gradient at exactly 0 is defined as 0.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  if (x.shape() != dy.shape())
    throw ShapeError("relu_backward shape mismatch");
  Tensor<T> dx(x.shape());
  for (size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------------------
// dense: x (N,in) * w (in,out) + b (out)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w,
                        const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2)
    throw ShapeError("dense expects rank-2 input and weights");
  if (x.dim(1) != w.dim(0))
    throw ShapeError("dense dimension mismatch: input " + x.shape_str() +
                     " vs weights " + w.shape_str());
  const int n = x.dim(0), in = x.dim(1), out = w.dim(1);
  if (b.size() != static_cast<size_t>(out))
    throw ShapeError("dense bias length must equal output width");
  Tensor<T> y({n, out});
  parallel_for(static_cast<size_t>(n), [&](size_t row) {
    T* yp = y.data() + row * out;
    for (int o = 0; o < out; ++o) yp[o] = b[static_cast<size_t>(o)];
    const T* xp = x.data() + row * in;
    for (int i = 0; i < in; ++i) {
      const T xv = xp[i];
      const T* wp = w.data() + static_cast<size_t>(i) * out;
      for (int o = 0; o < out; ++o) yp[o] += xv * wp[o];
    }
  });
  return y;
}

template <typename T>
struct DenseGrads {
  Tensor<T> dx, dw, db;
};

template <typename T>
DenseGrads<T> dense_backward(const Tensor<T>& x, const Tensor<T>& w,
                             const Tensor<T>& dy) {
  const int n = x.dim(0), in = x.dim(1), out = w.dim(1);
  if (dy.shape() != std::vector<int>({n, out}))
    throw ShapeError("dense_backward upstream shape mismatch");
  DenseGrads<T> g{Tensor<T>(x.shape()), Tensor<T>(w.shape()), Tensor<T>({out})};
  for (int row = 0; row < n; ++row) {
    const T* xp = x.data() + static_cast<size_t>(row) * in;
    const T* dyp = dy.data() + static_cast<size_t>(row) * out;
    T* dxp = g.dx.data() + static_cast<size_t>(row) * in;
    for (int i = 0; i < in; ++i) {
      const T* wp = w.data() + static_cast<size_t>(i) * out;
      T* dwp = g.dw.data() + static_cast<size_t>(i) * out;
      T acc = T(0);
      const T xv = xp[i];
      for (int o = 0; o < out; ++o) {
        acc += dyp[o] * wp[o];
        dwp[o] += xv * dyp[o];
      }
      dxp[i] = acc;
    }
    for (int o = 0; o < out; ++o) g.db[static_cast<size_t>(o)] += dyp[o];
  }
  return g;
}

// ---------------------------------------------------------------------------
// dropout: inverted scaling, so eval mode is exactly the identity. One draw
// per element in train mode.
// ---------------------------------------------------------------------------

template <typename T>
struct DropoutResult {
  Tensor<T> y;
  std::vector<T> mask;  // empty in eval mode
};

template <typename T>
DropoutResult<T> dropout_forward(const Tensor<T>& x, double rate, Mode mode,
                                 RngStream& stream) {
  if (!(rate > 0.0 && rate < 1.0))
    throw ParameterError("dropout rate must be in (0,1)");
  if (mode == Mode::eval) return {x, {}};
  DropoutResult<T> r{Tensor<T>(x.shape()), std::vector<T>(x.size())};
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  for (size_t i = 0; i < x.size(); ++i) {
    const T m = stream.next_double() < rate ? T(0) : scale;
    r.mask[i] = m;
    r.y[i] = x[i] * m;
  }
  return r;
}

template <typename T>
Tensor<T> dropout_backward(const std::vector<T>& mask, const Tensor<T>& dy) {
  if (mask.empty()) return dy;  // eval mode: identity
  Tensor<T> dx(dy.shape());
  for (size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask[i];
  return dx;
}

// ---------------------------------------------------------------------------
// softmax over 2 logits per row, computed with max subtraction.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax2_forward(const Tensor<T>& x) {
  if (x.rank() != 2 || x.dim(1) != 2)
    throw ShapeError("softmax2 expects shape (batch, 2)");
  if (!x.all_finite()) throw NumericError("softmax2 given non-finite logits");
  Tensor<T> y(x.shape());
  for (int row = 0; row < x.dim(0); ++row) {
    const T a = x.at2(row, 0), b = x.at2(row, 1);
    const T m = std::max(a, b);
    const double ea = std::exp(static_cast<double>(a - m));
    const double eb = std::exp(static_cast<double>(b - m));
    const double z = ea + eb;
    y.at2(row, 0) = static_cast<T>(ea / z);
    y.at2(row, 1) = static_cast<T>(eb / z);
  }
  return y;
}

// dx_i = p_i * (dy_i - sum_j dy_j p_j), per row
template <typename T>
Tensor<T> softmax2_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  if (y.shape() != dy.shape())
    throw ShapeError("softmax2_backward shape mismatch");
  Tensor<T> dx(y.shape());
  for (int row = 0; row < y.dim(0); ++row) {
    const double dot =
        static_cast<double>(dy.at2(row, 0)) * y.at2(row, 0) +
        static_cast<double>(dy.at2(row, 1)) * y.at2(row, 1);
    for (int j = 0; j < 2; ++j)
      dx.at2(row, j) = static_cast<T>(
          static_cast<double>(y.at2(row, j)) *
          (static_cast<double>(dy.at2(row, j)) - dot));
  }
  return dx;
}

// ---------------------------------------------------------------------------
// flatten: (N,C,H,W) -> (N, C*H*W); a pure reshape, inverse recovers input.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> flatten_forward(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("flatten expects rank-4 input");
  return x.reshaped({x.dim(0), x.dim(1) * x.dim(2) * x.dim(3)});
}

}  // namespace rbcnet
