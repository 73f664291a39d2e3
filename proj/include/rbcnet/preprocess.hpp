#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/image.hpp"
#include "rbcnet/tensor.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// Min-max rescaling of 8-bit-range values onto [0,1]: x/255 with the full
// byte range as the fixed feature bounds. Values outside [0,255] are a
// caller error, not data to be clamped silently.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> min_max_rescale(const Tensor<T>& x) {
  Tensor<T> out = x;
  for (size_t i = 0; i < out.size(); ++i) {
    const double v = static_cast<double>(out[i]);
    if (v < 0.0 || v > 255.0)
      throw RangeError("min_max_rescale input outside [0,255]: " +
                       std::to_string(v));
    out[i] = static_cast<T>(v / 255.0);
  }
  return out;
}

inline ImagePatch min_max_rescale(const ImagePatch& patch) {
  ImagePatch out = patch;
  out.pixels = min_max_rescale(patch.pixels);
  return out;
}

// ---------------------------------------------------------------------------
// Per-channel standardization. Statistics are population mean / standard
// deviation per channel, computed over the training split only; applying a
// split's own stats recenters it to mean 0, spread 1.
// ---------------------------------------------------------------------------

struct StandardizeStats {
  std::array<double, 3> mu{};
  std::array<double, 3> sigma{};
};

// x is an (N,3,H,W) batch; sigma is the population standard deviation.
inline StandardizeStats compute_channel_stats(const Tensor<float>& x) {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw ShapeError("channel stats expect an (N,3,H,W) batch, got " +
                     x.shape_str());
  StandardizeStats stats;
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  const size_t count = static_cast<size_t>(x.dim(0)) * plane;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sum2 = 0.0;
    for (int n = 0; n < x.dim(0); ++n) {
      const float* p = x.data() + (static_cast<size_t>(n) * 3 + c) * plane;
      for (size_t i = 0; i < plane; ++i) {
        sum += p[i];
        sum2 += static_cast<double>(p[i]) * p[i];
      }
    }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sum2 / static_cast<double>(count) -
                                         mean * mean);
    stats.mu[c] = mean;
    stats.sigma[c] = std::sqrt(var);
    if (stats.sigma[c] <= 0.0)
      throw DegenerateStatsError("channel " + std::to_string(c) +
                                 " has zero variance");
  }
  return stats;
}

namespace pre_detail {

template <typename Fn>
Tensor<float> per_channel(const Tensor<float>& x, Fn&& fn) {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw ShapeError("per-channel transform expects (N,3,H,W), got " +
                     x.shape_str());
  Tensor<float> out = x;
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < 3; ++c) {
      float* p = out.data() + (static_cast<size_t>(n) * 3 + c) * plane;
      for (size_t i = 0; i < plane; ++i)
        p[i] = static_cast<float>(fn(c, static_cast<double>(p[i])));
    }
  return out;
}

}  // namespace pre_detail

inline Tensor<float> standardize(const Tensor<float>& x,
                                 const StandardizeStats& stats) {
  for (int c = 0; c < 3; ++c)
    if (stats.sigma[c] <= 0.0)
      throw DegenerateStatsError("standardize: sigma[" + std::to_string(c) +
                                 "] must be > 0");
  return pre_detail::per_channel(x, [&](int c, double v) {
    return (v - stats.mu[c]) / stats.sigma[c];
  });
}

// Mean-centering with the fixed byte-range scale: (x - mu)/255. A gentler
// alternative to standardize that keeps the spread information.
inline Tensor<float> mean_normalize(const Tensor<float>& x,
                                    const StandardizeStats& stats) {
  return pre_detail::per_channel(
      x, [&](int c, double v) { return (v - stats.mu[c]) / 255.0; });
}

// ---------------------------------------------------------------------------
// Stain normalization: a linear per-channel mean/std transfer in an
// orthonormal luminance/opponent color basis. Mapping every slide to one
// reference's statistics removes stain-chemistry spread without touching
// morphology; the transform is deterministic and (up to clipping)
// idempotent. Basis rows: luminance (R+G+B)/sqrt3, red-green opponent
// (R-G)/sqrt2, yellow-blue opponent (R+G-2B)/sqrt6; orthonormal, so the
// inverse is the transpose.
// ---------------------------------------------------------------------------

struct StainStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
};

namespace pre_detail {

inline void rgb_to_opponent(double r, double g, double b, double* o) {
  static const double s3 = std::sqrt(3.0), s2 = std::sqrt(2.0),
                      s6 = std::sqrt(6.0);
  o[0] = (r + g + b) / s3;
  o[1] = (r - g) / s2;
  o[2] = (r + g - 2.0 * b) / s6;
}

inline void opponent_to_rgb(const double* o, double* rgb) {
  static const double s3 = std::sqrt(3.0), s2 = std::sqrt(2.0),
                      s6 = std::sqrt(6.0);
  rgb[0] = o[0] / s3 + o[1] / s2 + o[2] / s6;
  rgb[1] = o[0] / s3 - o[1] / s2 + o[2] / s6;
  rgb[2] = o[0] / s3 - 2.0 * o[2] / s6;
}

}  // namespace pre_detail

inline StainStats compute_stain_stats(const ImagePatch& patch) {
  require_patch(patch, "compute_stain_stats");
  const size_t n = static_cast<size_t>(patch.height()) * patch.width();
  std::array<double, 3> sum{}, sum2{};
  for (int y = 0; y < patch.height(); ++y)
    for (int x = 0; x < patch.width(); ++x) {
      double o[3];
      pre_detail::rgb_to_opponent(patch.at(y, x, 0), patch.at(y, x, 1),
                                  patch.at(y, x, 2), o);
      for (int c = 0; c < 3; ++c) {
        sum[c] += o[c];
        sum2[c] += o[c] * o[c];
      }
    }
  StainStats stats;
  for (int c = 0; c < 3; ++c) {
    stats.mean[c] = sum[c] / static_cast<double>(n);
    const double var = std::max(
        0.0, sum2[c] / static_cast<double>(n) - stats.mean[c] * stats.mean[c]);
    stats.std[c] = std::sqrt(var);
  }
  return stats;
}

// Maps the patch so its opponent-space channel statistics equal `target`.
// With clip=false the result may leave [0,255]; channel means then match the
// target's exactly up to float rounding.
inline ImagePatch stain_normalize(const ImagePatch& patch,
                                  const StainStats& target, bool clip = true) {
  require_patch(patch, "stain_normalize");
  const StainStats src = compute_stain_stats(patch);
  std::array<double, 3> scale{}, shift{};
  for (int c = 0; c < 3; ++c) {
    if (src.std[c] <= 0.0)
      throw DegenerateStatsError("stain_normalize: source channel " +
                                 std::to_string(c) + " has zero variance");
    if (target.std[c] <= 0.0)
      throw DegenerateStatsError("stain_normalize: target channel " +
                                 std::to_string(c) + " has zero variance");
    scale[c] = target.std[c] / src.std[c];
    shift[c] = target.mean[c] - src.mean[c] * scale[c];
  }
  ImagePatch out = patch;
  for (int y = 0; y < patch.height(); ++y)
    for (int x = 0; x < patch.width(); ++x) {
      double o[3], rgb[3];
      pre_detail::rgb_to_opponent(patch.at(y, x, 0), patch.at(y, x, 1),
                                  patch.at(y, x, 2), o);
      for (int c = 0; c < 3; ++c) o[c] = o[c] * scale[c] + shift[c];
      pre_detail::opponent_to_rgb(o, rgb);
      for (int c = 0; c < 3; ++c) {
        double v = rgb[c];
        if (clip) v = std::min(255.0, std::max(0.0, v));
        out.at(y, x, c) = static_cast<float>(v);
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Optional dataset-level transforms behind augmentation policy flags, both
// off by default: per-position feature standardization and channel-level ZCA
// whitening (3x3 channel covariance, symmetric inverse square root).
// ---------------------------------------------------------------------------

struct FeaturewiseStats {
  Tensor<float> mu;     // (3,H,W)
  Tensor<float> sigma;  // (3,H,W)
};

inline FeaturewiseStats compute_featurewise_stats(const Tensor<float>& x) {
  if (x.rank() != 4)
    throw ShapeError("featurewise stats expect (N,C,H,W), got " +
                     x.shape_str());
  const int n = x.dim(0);
  if (n < 1) throw DegenerateStatsError("featurewise stats need >= 1 sample");
  const size_t feat = x.size() / static_cast<size_t>(n);
  FeaturewiseStats st;
  st.mu = Tensor<float>({x.dim(1), x.dim(2), x.dim(3)});
  st.sigma = Tensor<float>({x.dim(1), x.dim(2), x.dim(3)});
  for (size_t i = 0; i < feat; ++i) {
    double sum = 0.0, sum2 = 0.0;
    for (int s = 0; s < n; ++s) {
      const double v = x[static_cast<size_t>(s) * feat + i];
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / n;
    const double var = std::max(0.0, sum2 / n - mean * mean);
    st.mu[i] = static_cast<float>(mean);
    st.sigma[i] = static_cast<float>(std::sqrt(var));
  }
  return st;
}

inline Tensor<float> featurewise_standardize(const Tensor<float>& x,
                                             const FeaturewiseStats& st,
                                             double eps = 1e-6) {
  if (x.rank() != 4)
    throw ShapeError("featurewise standardize expects (N,C,H,W)");
  const size_t feat = st.mu.size();
  if (x.size() != feat * static_cast<size_t>(x.dim(0)))
    throw ShapeError("featurewise stats shape does not match batch");
  Tensor<float> out = x;
  for (int s = 0; s < x.dim(0); ++s)
    for (size_t i = 0; i < feat; ++i) {
      const size_t j = static_cast<size_t>(s) * feat + i;
      out[j] = static_cast<float>((x[j] - st.mu[i]) /
                                  (static_cast<double>(st.sigma[i]) + eps));
    }
  return out;
}

namespace pre_detail {

// Cyclic Jacobi eigendecomposition of a symmetric 3x3 matrix: a = v d v^T
// with v orthonormal columns. Plenty for a channel covariance.
inline void eigen_sym3(const double a_in[3][3], double d[3], double v[3][3]) {
  double a[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      a[i][j] = a_in[i][j];
      v[i][j] = i == j ? 1.0 : 0.0;
    }
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = std::fabs(a[0][1]) + std::fabs(a[0][2]) + std::fabs(a[1][2]);
    if (off < 1e-15) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (std::fabs(a[p][q]) < 1e-18) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (int k = 0; k < 3; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  for (int i = 0; i < 3; ++i) d[i] = a[i][i];
}

}  // namespace pre_detail

struct ZcaChannelStats {
  std::array<double, 3> mu{};
  double w[3][3] = {};  // whitening matrix: out = w (p - mu)
};

inline ZcaChannelStats compute_zca_channel_stats(const Tensor<float>& x,
                                                 double eps = 1e-5) {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw ShapeError("zca stats expect (N,3,H,W), got " + x.shape_str());
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  const size_t count = static_cast<size_t>(x.dim(0)) * plane;
  ZcaChannelStats st;
  double cov[3][3] = {};
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (int n = 0; n < x.dim(0); ++n) {
      const float* p = x.data() + (static_cast<size_t>(n) * 3 + c) * plane;
      for (size_t i = 0; i < plane; ++i) sum += p[i];
    }
    st.mu[c] = sum / static_cast<double>(count);
  }
  for (int n = 0; n < x.dim(0); ++n) {
    const float* base = x.data() + static_cast<size_t>(n) * 3 * plane;
    for (size_t i = 0; i < plane; ++i) {
      const double p0 = base[i] - st.mu[0];
      const double p1 = base[plane + i] - st.mu[1];
      const double p2 = base[2 * plane + i] - st.mu[2];
      cov[0][0] += p0 * p0;
      cov[0][1] += p0 * p1;
      cov[0][2] += p0 * p2;
      cov[1][1] += p1 * p1;
      cov[1][2] += p1 * p2;
      cov[2][2] += p2 * p2;
    }
  }
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j <= i; ++j) cov[i][j] = cov[j][i];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) cov[i][j] /= static_cast<double>(count);

  double d[3], v[3][3];
  pre_detail::eigen_sym3(cov, d, v);
  // w = v diag(1/sqrt(d+eps)) v^T  — the symmetric (ZCA) whitening root
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k)
        acc += v[i][k] * v[j][k] / std::sqrt(std::max(0.0, d[k]) + eps);
      st.w[i][j] = acc;
    }
  return st;
}

inline Tensor<float> zca_channel_whiten(const Tensor<float>& x,
                                        const ZcaChannelStats& st) {
  if (x.rank() != 4 || x.dim(1) != 3)
    throw ShapeError("zca whiten expects (N,3,H,W), got " + x.shape_str());
  Tensor<float> out = x;
  const size_t plane = static_cast<size_t>(x.dim(2)) * x.dim(3);
  for (int n = 0; n < x.dim(0); ++n) {
    float* base = out.data() + static_cast<size_t>(n) * 3 * plane;
    for (size_t i = 0; i < plane; ++i) {
      const double p[3] = {base[i] - st.mu[0], base[plane + i] - st.mu[1],
                           base[2 * plane + i] - st.mu[2]};
      for (int c = 0; c < 3; ++c)
        base[static_cast<size_t>(c) * plane + i] = static_cast<float>(
            st.w[c][0] * p[0] + st.w[c][1] * p[1] + st.w[c][2] * p[2]);
    }
  }
  return out;
}

}  // namespace rbcnet
