#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "rbcnet/gradcheck.hpp"
#include "rbcnet/layers.hpp"
#include "rbcnet/rng.hpp"
#include "rbcnet/tensor.hpp"

using namespace rbcnet;

namespace {

// Independent conv reference: direct stencil evaluation in double, explicit
// zero padding. y[p] = b + sum_m w[m] * x[p - m + center].
template <typename T>
Tensor<T> conv_reference(const Tensor<T>& x, const Tensor<T>& w,
                         const Tensor<T>& b) {
  const int n = x.dim(0), ic = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int oc = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ph = kh / 2, pw = kw / 2;
  Tensor<T> y({n, oc, h, wd});
  for (int in = 0; in < n; ++in)
    for (int o = 0; o < oc; ++o)
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < wd; ++xx) {
          double acc = static_cast<double>(b[static_cast<size_t>(o)]);
          for (int c = 0; c < ic; ++c)
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const int iy = yy - ky + ph, ix = xx - kx + pw;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += static_cast<double>(w.at4(o, c, ky, kx)) *
                       static_cast<double>(x.at4(in, c, iy, ix));
              }
          y.at4(in, o, yy, xx) = static_cast<T>(acc);
        }
  return y;
}

template <typename T>
double weighted_sum(const Tensor<T>& t, const Tensor<T>& g) {
  double acc = 0.0;
  for (size_t i = 0; i < t.size(); ++i)
    acc += static_cast<double>(t[i]) * static_cast<double>(g[i]);
  return acc;
}

template <typename T>
Tensor<T> random_tensor(std::vector<int> shape, RngStream& s, double lo = -1.0,
                        double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  fill_uniform(t, s, lo, hi);
  return t;
}

// Fills with well-separated values so a finite-difference step cannot change
// any pooling argmax.
template <typename T>
Tensor<T> gapped_tensor(std::vector<int> shape, RngStream& s) {
  Tensor<T> t(std::move(shape));
  std::vector<int> order(t.size());
  for (size_t i = 0; i < t.size(); ++i) order[i] = static_cast<int>(i);
  s.shuffle(order);
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<T>(0.1 * order[i]);
  return t;
}

template <typename T>
double tolerance();
template <>
double tolerance<float>() {
  return 1e-3;
}
template <>
double tolerance<double>() {
  return 1e-6;
}

}  // namespace

TEST(Conv2d, ImpulseReproducesKernel) {
  TensorF x({1, 1, 5, 5});
  x.at4(0, 0, 2, 2) = 1.0f;
  TensorF w({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) w[static_cast<size_t>(i)] = static_cast<float>(i + 1);
  TensorF b({1});
  TensorF y = conv2d_forward(x, w, b);
  for (int yy = 0; yy < 5; ++yy)
    for (int xx = 0; xx < 5; ++xx) {
      const bool inside = std::abs(yy - 2) <= 1 && std::abs(xx - 2) <= 1;
      const float expect =
          inside ? w.at4(0, 0, yy - 1, xx - 1) : 0.0f;
      EXPECT_EQ(y.at4(0, 0, yy, xx), expect) << yy << "," << xx;
    }
}

TEST(Conv2d, DeltaKernelIsIdentity) {
  RngStream s(1);
  TensorF x = random_tensor<float>({2, 3, 6, 6}, s);
  TensorF w({3, 3, 3, 3});
  for (int o = 0; o < 3; ++o) w.at4(o, o, 1, 1) = 1.0f;
  TensorF b({3});
  TensorF y = conv2d_forward(x, w, b);
  ASSERT_EQ(y.shape(), x.shape());
  for (size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(y[i], x[i]);
}

TEST(Conv2d, ValidationErrors) {
  RngStream s(2);
  TensorF x = random_tensor<float>({1, 2, 4, 4}, s);
  TensorF w = random_tensor<float>({1, 3, 3, 3}, s);  // channel mismatch
  TensorF b({1});
  EXPECT_THROW(conv2d_forward(x, w, b), ShapeError);
  TensorF even = random_tensor<float>({1, 2, 2, 2}, s);
  EXPECT_THROW(conv2d_forward(x, even, b), ShapeError);
  TensorF w_ok = random_tensor<float>({2, 2, 3, 3}, s);
  EXPECT_THROW(conv2d_forward(x, w_ok, b), ShapeError);  // bias length 1
}

TEST(Conv2d, MatchesIndependentReference) {
  RngStream s(3);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 1 + static_cast<int>(s.uniform_index(2));
    const int ic = 1 + static_cast<int>(s.uniform_index(3));
    const int oc = 1 + static_cast<int>(s.uniform_index(3));
    const int h = 3 + static_cast<int>(s.uniform_index(5));
    const int wd = 3 + static_cast<int>(s.uniform_index(5));
    TensorF x = random_tensor<float>({n, ic, h, wd}, s);
    TensorF w = random_tensor<float>({oc, ic, 3, 3}, s);
    TensorF b = random_tensor<float>({oc}, s);
    TensorF got = conv2d_forward(x, w, b);
    TensorF want = conv_reference(x, w, b);
    EXPECT_LT(max_relative_error(got, want), 1e-5);
  }
}

TEST(Conv2d, SamePaddingKeepsSpatialDims) {
  RngStream s(4);
  TensorF x = random_tensor<float>({1, 1, 7, 9}, s);
  TensorF w = random_tensor<float>({2, 1, 3, 3}, s);
  TensorF b({2});
  TensorF y = conv2d_forward(x, w, b);
  EXPECT_EQ(y.shape(), (std::vector<int>{1, 2, 7, 9}));
}

// Analytic backward runs in T; the finite-difference side always evaluates
// the layer on the FP64 path, so the oracle is not drowned by FP32
// arithmetic noise at step 1e-3.
template <typename T>
void conv_gradient_check(uint64_t seed, int trials) {
  RngStream s(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 1 + static_cast<int>(s.uniform_index(2));
    const int ic = 1 + static_cast<int>(s.uniform_index(2));
    const int oc = 1 + static_cast<int>(s.uniform_index(2));
    const int h = 3 + static_cast<int>(s.uniform_index(3));
    const int wd = 3 + static_cast<int>(s.uniform_index(3));
    Tensor<T> x = random_tensor<T>({n, ic, h, wd}, s);
    Tensor<T> w = random_tensor<T>({oc, ic, 3, 3}, s);
    Tensor<T> b = random_tensor<T>({oc}, s);
    Tensor<T> g = random_tensor<T>({n, oc, h, wd}, s);

    auto grads = conv2d_backward(x, w, g);
    const TensorD xd = tensor_cast<double>(x), wd_ = tensor_cast<double>(w);
    const TensorD bd = tensor_cast<double>(b), gd = tensor_cast<double>(g);
    auto fx = [&](const TensorD& probe) {
      return weighted_sum(conv2d_forward(probe, wd_, bd), gd);
    };
    auto fw = [&](const TensorD& probe) {
      return weighted_sum(conv2d_forward(xd, probe, bd), gd);
    };
    auto fb = [&](const TensorD& probe) {
      return weighted_sum(conv2d_forward(xd, wd_, probe), gd);
    };
    EXPECT_LT(max_relative_error(tensor_cast<double>(grads.dx),
                                 finite_diff_gradient<double>(fx, xd)),
              tolerance<T>());
    EXPECT_LT(max_relative_error(tensor_cast<double>(grads.dw),
                                 finite_diff_gradient<double>(fw, wd_)),
              tolerance<T>());
    EXPECT_LT(max_relative_error(tensor_cast<double>(grads.db),
                                 finite_diff_gradient<double>(fb, bd)),
              tolerance<T>());
  }
}

TEST(Conv2d, BackwardMatchesOracleF32) { conv_gradient_check<float>(0, 100); }
TEST(Conv2d, BackwardMatchesOracleF64) { conv_gradient_check<double>(1, 25); }

TEST(Conv2d, BackwardOnEightByEightBatch) {
  // random 2x3x8x8 input, all three FP32 gradients within 1e-3 of the oracle
  RngStream s(0);
  TensorF x = random_tensor<float>({2, 3, 8, 8}, s);
  TensorF w = random_tensor<float>({2, 3, 3, 3}, s);
  TensorF b = random_tensor<float>({2}, s);
  TensorF g = random_tensor<float>({2, 2, 8, 8}, s);
  auto grads = conv2d_backward(x, w, g);
  const TensorD xd = tensor_cast<double>(x), wd = tensor_cast<double>(w);
  const TensorD bd = tensor_cast<double>(b), gd = tensor_cast<double>(g);
  auto fx = [&](const TensorD& p) {
    return weighted_sum(conv2d_forward(p, wd, bd), gd);
  };
  auto fw = [&](const TensorD& p) {
    return weighted_sum(conv2d_forward(xd, p, bd), gd);
  };
  auto fb = [&](const TensorD& p) {
    return weighted_sum(conv2d_forward(xd, wd, p), gd);
  };
  EXPECT_LT(max_relative_error(tensor_cast<double>(grads.dx),
                               finite_diff_gradient<double>(fx, xd)),
            1e-3);
  EXPECT_LT(max_relative_error(tensor_cast<double>(grads.dw),
                               finite_diff_gradient<double>(fw, wd)),
            1e-3);
  EXPECT_LT(max_relative_error(tensor_cast<double>(grads.db),
                               finite_diff_gradient<double>(fb, bd)),
            1e-3);
}

TEST(MaxPool, SingleWindow) {
  TensorF x = TensorF::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  auto r = maxpool2d_forward(x);
  EXPECT_EQ(r.y.shape(), (std::vector<int>{1, 1, 1, 1}));
  EXPECT_EQ(r.y[0], 4.0f);
  TensorF dy({1, 1, 1, 1}, 1.0f);
  TensorF dx = maxpool2d_backward(x.shape(), r.argmax, dy);
  EXPECT_EQ(dx.storage(), (std::vector<float>{0, 0, 0, 1}));
}

TEST(MaxPool, FloorsOddDims) {
  TensorF x({1, 1, 25, 25}, 0.0f);
  auto r = maxpool2d_forward(x);
  EXPECT_EQ(r.y.shape(), (std::vector<int>{1, 1, 12, 12}));
  TensorF y({2, 3, 5, 7}, 0.0f);
  EXPECT_EQ(maxpool2d_forward(y).y.shape(), (std::vector<int>{2, 3, 2, 3}));
  TensorF tiny({1, 1, 1, 4}, 0.0f);
  EXPECT_THROW(maxpool2d_forward(tiny), ShapeError);
}

TEST(MaxPool, TiesRouteToFirstInScanOrder) {
  TensorF x({1, 1, 4, 4}, 7.0f);
  auto r = maxpool2d_forward(x);
  for (size_t i = 0; i < r.y.size(); ++i) EXPECT_EQ(r.y[i], 7.0f);
  // argmax of an all-equal window is its top-left element
  EXPECT_EQ(r.argmax[0], static_cast<int64_t>(x.idx4(0, 0, 0, 0)));
  EXPECT_EQ(r.argmax[1], static_cast<int64_t>(x.idx4(0, 0, 0, 2)));
  EXPECT_EQ(r.argmax[2], static_cast<int64_t>(x.idx4(0, 0, 2, 0)));
  EXPECT_EQ(r.argmax[3], static_cast<int64_t>(x.idx4(0, 0, 2, 2)));
  TensorF dy({1, 1, 2, 2}, 1.0f);
  TensorF dx = maxpool2d_backward(x.shape(), r.argmax, dy);
  EXPECT_EQ(dx.sum(), 4.0);  // one cell per window
  for (size_t i = 0; i < dx.size(); ++i)
    EXPECT_TRUE(dx[i] == 0.0f || dx[i] == 1.0f);
}

template <typename T>
void pool_gradient_check(uint64_t seed, int trials) {
  RngStream s(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 1 + static_cast<int>(s.uniform_index(2));
    const int c = 1 + static_cast<int>(s.uniform_index(2));
    const int h = 4 + 2 * static_cast<int>(s.uniform_index(2));
    const int wd = 4 + 2 * static_cast<int>(s.uniform_index(2));
    Tensor<T> x = gapped_tensor<T>({n, c, h, wd}, s);
    auto r = maxpool2d_forward(x);
    Tensor<T> g = random_tensor<T>(r.y.shape(), s);
    Tensor<T> dx = maxpool2d_backward(x.shape(), r.argmax, g);
    const TensorD xd = tensor_cast<double>(x), gd = tensor_cast<double>(g);
    auto f = [&](const TensorD& p) {
      return weighted_sum(maxpool2d_forward(p).y, gd);
    };
    EXPECT_LT(max_relative_error(tensor_cast<double>(dx),
                                 finite_diff_gradient<double>(f, xd)),
              tolerance<T>());
  }
}

TEST(MaxPool, BackwardMatchesOracleF32) { pool_gradient_check<float>(2, 100); }
TEST(MaxPool, BackwardMatchesOracleF64) { pool_gradient_check<double>(3, 25); }

TEST(Relu, ClampsNegatives) {
  TensorF x = TensorF::from_data({3}, {-1.0f, 0.0f, 2.0f});
  TensorF y = relu_forward(x);
  EXPECT_EQ(y.storage(), (std::vector<float>{0.0f, 0.0f, 2.0f}));
  TensorF pos = TensorF::from_data({3}, {0.5f, 1.0f, 9.0f});
  EXPECT_EQ(relu_forward(pos).storage(), pos.storage());
}

TEST(Relu, GradientAtZeroIsZero) {
  TensorF x = TensorF::from_data({3}, {-1.0f, 0.0f, 2.0f});
  TensorF dy({3}, 5.0f);
  TensorF dx = relu_backward(x, dy);
  EXPECT_EQ(dx.storage(), (std::vector<float>{0.0f, 0.0f, 5.0f}));
}

TEST(Relu, BackwardMatchesOracleOffKink) {
  RngStream s(7);
  for (int trial = 0; trial < 100; ++trial) {
    TensorF x({12});
    for (size_t i = 0; i < x.size(); ++i) {
      double v = 0.0;
      do {
        v = s.uniform(-1.0, 1.0);
      } while (std::fabs(v) <= 1e-2);
      x[i] = static_cast<float>(v);
    }
    TensorF g = random_tensor<float>({12}, s);
    TensorF dx = relu_backward(x, g);
    auto f = [&](const TensorF& p) { return weighted_sum(relu_forward(p), g); };
    EXPECT_LT(max_relative_error(dx, finite_diff_gradient<float>(f, x)), 1e-4);
  }
}

TEST(Dense, IdentityAndZeroCases) {
  RngStream s(8);
  TensorF x = random_tensor<float>({2, 4}, s);
  TensorF w({4, 4});
  for (int i = 0; i < 4; ++i) w.at2(i, i) = 1.0f;
  TensorF b({4});
  TensorF y = dense_forward(x, w, b);
  for (size_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(y[i], x[i]);

  TensorF zero({3, 4});
  TensorF b2 = TensorF::from_data({2}, {1.5f, -2.0f});
  TensorF w2({4, 2});
  TensorF y2 = dense_forward(zero, w2, b2);
  for (int row = 0; row < 3; ++row) {
    EXPECT_EQ(y2.at2(row, 0), 1.5f);
    EXPECT_EQ(y2.at2(row, 1), -2.0f);
  }
}

TEST(Dense, DimensionMismatchThrows) {
  TensorF x({2, 5});
  TensorF w({4, 3});
  TensorF b({3});
  EXPECT_THROW(dense_forward(x, w, b), ShapeError);
  TensorF w2({5, 3});
  TensorF bad_b({4});
  EXPECT_THROW(dense_forward(x, w2, bad_b), ShapeError);
}

template <typename T>
void dense_gradient_check(uint64_t seed, int trials) {
  RngStream s(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 1 + static_cast<int>(s.uniform_index(4));
    const int in = 1 + static_cast<int>(s.uniform_index(7));
    const int out = 1 + static_cast<int>(s.uniform_index(4));
    Tensor<T> x = random_tensor<T>({n, in}, s);
    Tensor<T> w = random_tensor<T>({in, out}, s);
    Tensor<T> b = random_tensor<T>({out}, s);
    Tensor<T> g = random_tensor<T>({n, out}, s);
    auto grads = dense_backward(x, w, g);
    const TensorD xd = tensor_cast<double>(x), wd = tensor_cast<double>(w);
    const TensorD bd = tensor_cast<double>(b), gd = tensor_cast<double>(g);
    auto fx = [&](const TensorD& p) {
      return weighted_sum(dense_forward(p, wd, bd), gd);
    };
    auto fw = [&](const TensorD& p) {
      return weighted_sum(dense_forward(xd, p, bd), gd);
    };
    auto fb = [&](const TensorD& p) {
      return weighted_sum(dense_forward(xd, wd, p), gd);
    };
    EXPECT_LT(max_relative_error(tensor_cast<double>(grads.dx),
                                 finite_diff_gradient<double>(fx, xd)),
              tolerance<T>());
    EXPECT_LT(max_relative_error(tensor_cast<double>(grads.dw),
                                 finite_diff_gradient<double>(fw, wd)),
              tolerance<T>());
    EXPECT_LT(max_relative_error(tensor_cast<double>(grads.db),
                                 finite_diff_gradient<double>(fb, bd)),
              tolerance<T>());
  }
}

TEST(Dense, BackwardMatchesOracleF32) { dense_gradient_check<float>(4, 100); }
TEST(Dense, BackwardMatchesOracleF64) { dense_gradient_check<double>(5, 25); }

TEST(Dropout, EvalModeIsIdentity) {
  RngStream s(9);
  TensorF x = random_tensor<float>({4, 7}, s);
  auto r = dropout_forward(x, 0.5, Mode::eval, s);
  EXPECT_EQ(r.y.storage(), x.storage());
  EXPECT_TRUE(r.mask.empty());
  // eval-mode backward is the identity as well
  TensorF dy = random_tensor<float>({4, 7}, s);
  EXPECT_EQ(dropout_backward(r.mask, dy).storage(), dy.storage());
}

TEST(Dropout, TrainMeanStaysNearOne) {
  RngStream s(10);
  TensorF x({100000}, 1.0f);
  auto r = dropout_forward(x, 0.5, Mode::train, s);
  EXPECT_NEAR(r.y.mean(), 1.0, 0.02);
  for (size_t i = 0; i < r.mask.size(); ++i)
    EXPECT_TRUE(r.mask[i] == 0.0f || r.mask[i] == 2.0f);
}

TEST(Dropout, DeterministicGivenStreamState) {
  RngStream s1(11, 5), s2(11, 5);
  TensorF x({64}, 1.0f);
  auto a = dropout_forward(x, 0.3, Mode::train, s1);
  auto b = dropout_forward(x, 0.3, Mode::train, s2);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_EQ(a.y.storage(), b.y.storage());
}

TEST(Dropout, RateMustBeInOpenInterval) {
  RngStream s(12);
  TensorF x({4}, 1.0f);
  EXPECT_THROW(dropout_forward(x, 0.0, Mode::train, s), ParameterError);
  EXPECT_THROW(dropout_forward(x, 1.0, Mode::train, s), ParameterError);
  EXPECT_THROW(dropout_forward(x, -0.1, Mode::eval, s), ParameterError);
}

TEST(Dropout, BackwardAppliesMask) {
  RngStream s(13);
  TensorF x = random_tensor<float>({30}, s);
  auto r = dropout_forward(x, 0.4, Mode::train, s);
  TensorF dy = random_tensor<float>({30}, s);
  TensorF dx = dropout_backward(r.mask, dy);
  for (size_t i = 0; i < dx.size(); ++i)
    EXPECT_FLOAT_EQ(dx[i], dy[i] * r.mask[i]);
}

TEST(Softmax2, Anchors) {
  TensorF x = TensorF::from_data({2, 2}, {0.0f, 0.0f, 1.0f, 0.0f});
  TensorF y = softmax2_forward(x);
  EXPECT_FLOAT_EQ(y.at2(0, 0), 0.5f);
  EXPECT_FLOAT_EQ(y.at2(0, 1), 0.5f);
  EXPECT_NEAR(y.at2(1, 0), 0.7311f, 1e-4);
  EXPECT_NEAR(y.at2(1, 1), 0.2689f, 1e-4);
}

TEST(Softmax2, ShiftInvarianceAndRowSums) {
  RngStream s(14);
  TensorF x = random_tensor<float>({16, 2}, s, -4.0, 4.0);
  TensorF shifted = x;
  for (int row = 0; row < 16; ++row) {
    shifted.at2(row, 0) += 3.7f;
    shifted.at2(row, 1) += 3.7f;
  }
  TensorF a = softmax2_forward(x), b = softmax2_forward(shifted);
  for (size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
  for (int row = 0; row < 16; ++row) {
    EXPECT_NEAR(a.at2(row, 0) + a.at2(row, 1), 1.0, 1e-6);
    EXPECT_GT(a.at2(row, 0), 0.0f);
    EXPECT_LT(a.at2(row, 0), 1.0f);
  }
  // extreme logits survive via max subtraction
  TensorF big = TensorF::from_data({1, 2}, {10000.0f, -10000.0f});
  TensorF yb = softmax2_forward(big);
  EXPECT_TRUE(yb.all_finite());
  EXPECT_NEAR(yb.at2(0, 0), 1.0f, 1e-6);
}

TEST(Softmax2, RejectsBadInput) {
  RngStream s(15);
  TensorF wide = random_tensor<float>({2, 3}, s);
  EXPECT_THROW(softmax2_forward(wide), ShapeError);
  TensorF nan = TensorF::from_data({1, 2},
                                   {std::numeric_limits<float>::quiet_NaN(), 0.0f});
  EXPECT_THROW(softmax2_forward(nan), NumericError);
}

template <typename T>
void softmax_gradient_check(uint64_t seed, int trials) {
  RngStream s(seed);
  for (int trial = 0; trial < trials; ++trial) {
    const int n = 1 + static_cast<int>(s.uniform_index(5));
    Tensor<T> x = random_tensor<T>({n, 2}, s, -2.0, 2.0);
    Tensor<T> g = random_tensor<T>({n, 2}, s);
    Tensor<T> y = softmax2_forward(x);
    Tensor<T> dx = softmax2_backward(y, g);
    const TensorD xd = tensor_cast<double>(x), gd = tensor_cast<double>(g);
    auto f = [&](const TensorD& p) {
      return weighted_sum(softmax2_forward(p), gd);
    };
    EXPECT_LT(max_relative_error(tensor_cast<double>(dx),
                                 finite_diff_gradient<double>(f, xd)),
              tolerance<T>());
  }
}

TEST(Softmax2, BackwardMatchesOracleF32) { softmax_gradient_check<float>(6, 100); }
TEST(Softmax2, BackwardMatchesOracleF64) { softmax_gradient_check<double>(16, 25); }

TEST(Flatten, ShapesAndRoundTrip) {
  TensorF wide({1, 256, 12, 12}, 0.25f);
  EXPECT_EQ(flatten_forward(wide).shape(), (std::vector<int>{1, 36864}));
  TensorF one({1, 1, 1, 1}, 3.0f);
  EXPECT_EQ(flatten_forward(one).shape(), (std::vector<int>{1, 1}));

  RngStream s(17);
  TensorF x = random_tensor<float>({2, 3, 4, 5}, s);
  TensorF flat = flatten_forward(x);
  TensorF back = flat.reshaped(x.shape());
  EXPECT_EQ(back.storage(), x.storage());
  TensorF rank2({2, 3}, 0.0f);
  EXPECT_THROW(flatten_forward(rank2), ShapeError);
}
