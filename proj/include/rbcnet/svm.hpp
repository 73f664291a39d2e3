#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "rbcnet/checkpoint.hpp"
#include "rbcnet/errors.hpp"
#include "rbcnet/features.hpp"
#include "rbcnet/tensor.hpp"
#include "rbcnet/threads.hpp"

namespace rbcnet {

// ---------------------------------------------------------------------------
// RBF kernel and the supporting per-dimension feature scaler. Raw deep
// features have wildly varying scales, which would make a fixed-gamma RBF
// collapse to 0/1 everywhere; features are therefore standardized with
// train-set statistics before any kernel evaluation.
// ---------------------------------------------------------------------------

struct FeatureScaler {
  std::vector<double> mu, sigma;

  void fit(const Tensor<float>& x) {
    if (x.rank() != 2) throw ShapeError("scaler expects an (N,D) matrix");
    const int n = x.dim(0), d = x.dim(1);
    if (n < 1) throw DegenerateStatsError("scaler needs >= 1 row");
    mu.assign(static_cast<size_t>(d), 0.0);
    sigma.assign(static_cast<size_t>(d), 0.0);
    for (int j = 0; j < d; ++j) {
      double sum = 0.0, sum2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double v = x.at2(i, j);
        sum += v;
        sum2 += v * v;
      }
      const double mean = sum / n;
      mu[static_cast<size_t>(j)] = mean;
      sigma[static_cast<size_t>(j)] =
          std::sqrt(std::max(0.0, sum2 / n - mean * mean));
    }
  }

  // Constant dimensions carry no information and map to 0.
  std::vector<float> transform(const float* row, size_t d) const {
    if (d != mu.size())
      throw ParameterError("feature dimension " + std::to_string(d) +
                           " does not match scaler dimension " +
                           std::to_string(mu.size()));
    std::vector<float> out(d);
    for (size_t j = 0; j < d; ++j)
      out[j] = sigma[j] > 1e-12
                   ? static_cast<float>((row[j] - mu[j]) / sigma[j])
                   : 0.0f;
    return out;
  }

  Tensor<float> transform(const Tensor<float>& x) const {
    if (x.rank() != 2) throw ShapeError("scaler expects an (N,D) matrix");
    Tensor<float> out = x;
    for (int i = 0; i < x.dim(0); ++i) {
      const auto row =
          transform(x.data() + static_cast<size_t>(i) * x.dim(1),
                    static_cast<size_t>(x.dim(1)));
      std::copy(row.begin(), row.end(),
                out.data() + static_cast<size_t>(i) * x.dim(1));
    }
    return out;
  }
};

inline double rbf_kernel(const float* u, const float* v, size_t d,
                         double gamma) {
  double dist2 = 0.0;
  for (size_t i = 0; i < d; ++i) {
    const double diff = static_cast<double>(u[i]) - v[i];
    dist2 += diff * diff;
  }
  return std::exp(-gamma * dist2);
}

inline double rbf_kernel(const std::vector<double>& u,
                         const std::vector<double>& v, double gamma) {
  if (u.size() != v.size())
    throw ParameterError("rbf_kernel dimension mismatch: " +
                         std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
  double dist2 = 0.0;
  for (size_t i = 0; i < u.size(); ++i)
    dist2 += (u[i] - v[i]) * (u[i] - v[i]);
  return std::exp(-gamma * dist2);
}

// ---------------------------------------------------------------------------
// Trained kernel machine: support vectors are stored already scaled, so
// prediction is scale -> kernel expansion -> sign. Ties in the decision
// value resolve to +1.
// ---------------------------------------------------------------------------

struct SvmDecision {
  int label = 1;        // +1 / -1
  double value = 0.0;   // signed distance surrogate
};

struct KernelSvmModel {
  Tensor<float> sv;           // (M, D), scaled feature space
  std::vector<double> coef;   // alpha_i * y_i per support vector
  double bias = 0.0;
  double gamma = 0.1;
  double c = 1.0;
  FeatureScaler scaler;

  int dim() const { return sv.rank() == 2 ? sv.dim(1) : 0; }

  double decision_scaled(const float* x, size_t d) const {
    if (static_cast<int>(d) != dim())
      throw ParameterError("svm input dimension " + std::to_string(d) +
                           " does not match model dimension " +
                           std::to_string(dim()));
    double acc = bias;
    for (int i = 0; i < sv.dim(0); ++i)
      acc += coef[static_cast<size_t>(i)] *
             rbf_kernel(sv.data() + static_cast<size_t>(i) * sv.dim(1), x, d,
                        gamma);
    return acc;
  }
};

inline SvmDecision svm_predict(const KernelSvmModel& model,
                               const std::vector<float>& raw) {
  const auto scaled = model.scaler.transform(raw.data(), raw.size());
  SvmDecision d;
  d.value = model.decision_scaled(scaled.data(), scaled.size());
  d.label = d.value >= 0.0 ? 1 : -1;
  return d;
}

// ---------------------------------------------------------------------------
// Sequential minimal optimization over the dual, deterministic variant:
// the first working index comes from ordered sweeps (all points, then
// non-bound points), the second maximizes |E1 - E2|. The equality
// constraint sum(alpha_i y_i) = 0 is preserved exactly by every pairwise
// update; the box constraint is enforced by clipping.
// ---------------------------------------------------------------------------

struct SvmConfig {
  double c = 1.0;
  double gamma = 0.1;
  double tol = 1e-3;      // KKT tolerance on the reported solution
  int max_sweeps = 2000;  // hard bound on outer sweeps, guarantees halting
};

struct SmoResult {
  KernelSvmModel model;
  std::vector<double> alpha;  // one per training row, including zeros
  int sweeps = 0;
};

namespace svm_detail {

// Kernel matrix access: precomputed below the memory knee, computed on the
// fly above it. Rows are only needed transiently by the SMO updates.
class KernelTable {
 public:
  KernelTable(const Tensor<float>& x, double gamma)
      : x_(x), gamma_(gamma), n_(x.dim(0)), d_(static_cast<size_t>(x.dim(1))) {
    if (n_ <= 2048) {
      full_.resize(static_cast<size_t>(n_) * n_);
      parallel_for(static_cast<size_t>(n_), [&](size_t i) {
        for (int j = 0; j < n_; ++j)
          full_[i * static_cast<size_t>(n_) + j] = at_uncached(
              static_cast<int>(i), j);
      });
    }
  }

  double operator()(int i, int j) const {
    if (!full_.empty())
      return full_[static_cast<size_t>(i) * static_cast<size_t>(n_) + j];
    return at_uncached(i, j);
  }

 private:
  double at_uncached(int i, int j) const {
    return rbf_kernel(x_.data() + static_cast<size_t>(i) * d_,
                      x_.data() + static_cast<size_t>(j) * d_, d_, gamma_);
  }

  const Tensor<float>& x_;
  double gamma_;
  int n_;
  size_t d_;
  std::vector<double> full_;
};

}  // namespace svm_detail

inline SmoResult smo_train(const FeatureMatrix& feats, const SvmConfig& cfg) {
  if (feats.x.rank() != 2) throw ShapeError("smo_train expects (N,D) features");
  const int n = feats.x.dim(0);
  if (static_cast<size_t>(n) != feats.y.size())
    throw ShapeError("feature rows and labels disagree");
  size_t pos = 0;
  for (int y : feats.y) pos += y > 0 ? 1 : 0;
  if (pos == 0 || pos == static_cast<size_t>(n))
    throw TrainingError("svm training needs both classes present");
  if (cfg.c <= 0.0 || cfg.gamma <= 0.0)
    throw ParameterError("svm C and gamma must be positive");

  SmoResult res;
  res.model.gamma = cfg.gamma;
  res.model.c = cfg.c;
  res.model.scaler.fit(feats.x);
  const Tensor<float> x = res.model.scaler.transform(feats.x);
  const svm_detail::KernelTable kernel(x, cfg.gamma);

  const double C = cfg.c;
  // stop sweeping only when no point violates KKT by half the reported
  // tolerance, leaving headroom for the final bias refit
  const double work_tol = cfg.tol * 0.5;
  const double eps = 1e-12;
  std::vector<double>& alpha = res.alpha;
  alpha.assign(static_cast<size_t>(n), 0.0);
  std::vector<double> err(static_cast<size_t>(n));  // E_i = f(x_i) - y_i
  double b = 0.0;
  for (int i = 0; i < n; ++i) err[static_cast<size_t>(i)] = -feats.y[i];

  auto take_step = [&](int i1, int i2) -> bool {
    if (i1 == i2) return false;
    const double a1o = alpha[static_cast<size_t>(i1)];
    const double a2o = alpha[static_cast<size_t>(i2)];
    const int y1 = feats.y[static_cast<size_t>(i1)];
    const int y2 = feats.y[static_cast<size_t>(i2)];
    const double e1 = err[static_cast<size_t>(i1)];
    const double e2 = err[static_cast<size_t>(i2)];
    const double s = y1 * y2;
    double lo, hi;
    if (y1 != y2) {
      lo = std::max(0.0, a2o - a1o);
      hi = std::min(C, C + a2o - a1o);
    } else {
      lo = std::max(0.0, a1o + a2o - C);
      hi = std::min(C, a1o + a2o);
    }
    if (lo >= hi) return false;
    const double k11 = kernel(i1, i1), k12 = kernel(i1, i2),
                 k22 = kernel(i2, i2);
    const double eta = k11 + k22 - 2.0 * k12;
    double a2;
    if (eta > eps) {
      a2 = a2o + y2 * (e1 - e2) / eta;
      a2 = std::min(hi, std::max(lo, a2));
    } else {
      // flat direction: test both box ends of the dual objective
      const double f1 = y1 * (e1 - b) - a1o * k11 - s * a2o * k12;
      const double f2 = y2 * (e2 - b) - s * a1o * k12 - a2o * k22;
      const double l1 = a1o + s * (a2o - lo);
      const double h1 = a1o + s * (a2o - hi);
      const double obj_lo = l1 * f1 + lo * f2 + 0.5 * l1 * l1 * k11 +
                            0.5 * lo * lo * k22 + s * lo * l1 * k12;
      const double obj_hi = h1 * f1 + hi * f2 + 0.5 * h1 * h1 * k11 +
                            0.5 * hi * hi * k22 + s * hi * h1 * k12;
      if (obj_lo < obj_hi - eps)
        a2 = lo;
      else if (obj_hi < obj_lo - eps)
        a2 = hi;
      else
        return false;
    }
    if (std::fabs(a2 - a2o) < eps * (a2 + a2o + eps)) return false;
    const double a1 = a1o + s * (a2o - a2);

    const double d1 = (a1 - a1o) * y1, d2 = (a2 - a2o) * y2;
    const double b1 = b - e1 - d1 * k11 - d2 * k12;
    const double b2 = b - e2 - d1 * k12 - d2 * k22;
    double b_new;
    if (a1 > eps && a1 < C - eps)
      b_new = b1;
    else if (a2 > eps && a2 < C - eps)
      b_new = b2;
    else
      b_new = (b1 + b2) / 2.0;

    const double db = b_new - b;
    for (int i = 0; i < n; ++i)
      err[static_cast<size_t>(i)] +=
          d1 * kernel(i1, i) + d2 * kernel(i2, i) + db;
    alpha[static_cast<size_t>(i1)] = a1;
    alpha[static_cast<size_t>(i2)] = a2;
    b = b_new;
    return true;
  };

  auto examine = [&](int i2) -> bool {
    const int y2 = feats.y[static_cast<size_t>(i2)];
    const double a2 = alpha[static_cast<size_t>(i2)];
    const double r2 = err[static_cast<size_t>(i2)] * y2;
    const bool violates =
        (r2 < -work_tol && a2 < C - eps) || (r2 > work_tol && a2 > eps);
    if (!violates) return false;

    // best second index: maximal |E1 - E2| over non-bound points
    int best = -1;
    double best_gap = -1.0;
    for (int i = 0; i < n; ++i) {
      const double a = alpha[static_cast<size_t>(i)];
      if (a <= eps || a >= C - eps) continue;
      const double gap =
          std::fabs(err[static_cast<size_t>(i)] - err[static_cast<size_t>(i2)]);
      if (gap > best_gap) {
        best_gap = gap;
        best = i;
      }
    }
    if (best >= 0 && take_step(best, i2)) return true;
    for (int i = 0; i < n; ++i) {
      const double a = alpha[static_cast<size_t>(i)];
      if (a <= eps || a >= C - eps) continue;
      if (take_step(i, i2)) return true;
    }
    for (int i = 0; i < n; ++i)
      if (take_step(i, i2)) return true;
    return false;
  };

  // sweep non-bound points until stable, then verify with a full sweep;
  // done when a full sweep changes nothing
  bool examine_all = true;
  int sweeps = 0;
  while (sweeps < cfg.max_sweeps) {
    int changed = 0;
    for (int i = 0; i < n; ++i) {
      if (!examine_all) {
        const double a = alpha[static_cast<size_t>(i)];
        if (a <= eps || a >= C - eps) continue;
      }
      changed += examine(i) ? 1 : 0;
    }
    ++sweeps;
    if (examine_all) {
      if (changed == 0) break;
      examine_all = false;
    } else if (changed == 0) {
      examine_all = true;
    }
  }
  res.sweeps = sweeps;

  // bias refit: average the exact-margin condition over unbounded support
  // vectors (the running estimate drifts during clipped steps)
  double b_sum = 0.0;
  size_t b_count = 0;
  for (int i = 0; i < n; ++i) {
    const double a = alpha[static_cast<size_t>(i)];
    if (a > eps && a < C - eps) {
      double f_no_b = 0.0;
      for (int j = 0; j < n; ++j)
        if (alpha[static_cast<size_t>(j)] > eps)
          f_no_b += alpha[static_cast<size_t>(j)] *
                    feats.y[static_cast<size_t>(j)] * kernel(j, i);
      b_sum += feats.y[static_cast<size_t>(i)] - f_no_b;
      ++b_count;
    }
  }
  res.model.bias = b_count > 0 ? b_sum / static_cast<double>(b_count) : b;

  // keep only the support vectors
  std::vector<int> sv_idx;
  for (int i = 0; i < n; ++i)
    if (alpha[static_cast<size_t>(i)] > eps) sv_idx.push_back(i);
  if (sv_idx.empty()) throw TrainingError("smo produced no support vectors");
  res.model.sv = Tensor<float>({static_cast<int>(sv_idx.size()), x.dim(1)});
  res.model.coef.resize(sv_idx.size());
  for (size_t k = 0; k < sv_idx.size(); ++k) {
    const int i = sv_idx[k];
    res.model.coef[k] =
        alpha[static_cast<size_t>(i)] * feats.y[static_cast<size_t>(i)];
    std::copy(x.data() + static_cast<size_t>(i) * x.dim(1),
              x.data() + static_cast<size_t>(i + 1) * x.dim(1),
              res.model.sv.data() + k * static_cast<size_t>(x.dim(1)));
  }
  return res;
}

// Worst KKT violation of a dual solution over its training set; the solver
// must push this below its configured tolerance.
inline double kkt_residual(const FeatureMatrix& feats,
                           const std::vector<double>& alpha,
                           const KernelSvmModel& model) {
  const int n = feats.x.dim(0);
  if (static_cast<size_t>(n) != alpha.size())
    throw ParameterError("alpha size does not match feature rows");
  const Tensor<float> x = model.scaler.transform(feats.x);
  double worst = 0.0;
  const double eps = 1e-9;
  for (int i = 0; i < n; ++i) {
    const double f = model.decision_scaled(
        x.data() + static_cast<size_t>(i) * x.dim(1),
        static_cast<size_t>(x.dim(1)));
    const double margin = feats.y[static_cast<size_t>(i)] * f;
    const double a = alpha[static_cast<size_t>(i)];
    double resid;
    if (a <= eps)
      resid = std::max(0.0, 1.0 - margin);
    else if (a >= model.c - eps)
      resid = std::max(0.0, margin - 1.0);
    else
      resid = std::fabs(margin - 1.0);
    worst = std::max(worst, resid);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// SVM serialization inside the common checkpoint container (kind 1).
// ---------------------------------------------------------------------------

inline void save_svm_checkpoint(const std::string& path,
                                const KernelSvmModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot write checkpoint: " + path);
  ckpt::write_header(os, kKindSvm);
  ckpt::write_str(os, "svm-rbf;dim=" + std::to_string(model.dim()));
  ckpt::write_pod<uint32_t>(os, 5);
  ckpt::write_record(os, "sv", model.sv);

  const int m = model.sv.dim(0), d = model.sv.dim(1);
  Tensor<float> coef({m});
  for (int i = 0; i < m; ++i)
    coef[static_cast<size_t>(i)] = static_cast<float>(model.coef[i]);
  ckpt::write_record(os, "coef", coef);

  Tensor<float> hyper({3});
  hyper[0] = static_cast<float>(model.bias);
  hyper[1] = static_cast<float>(model.gamma);
  hyper[2] = static_cast<float>(model.c);
  ckpt::write_record(os, "hyper", hyper);

  Tensor<float> mu({d}), sigma({d});
  for (int j = 0; j < d; ++j) {
    mu[static_cast<size_t>(j)] = static_cast<float>(model.scaler.mu[j]);
    sigma[static_cast<size_t>(j)] = static_cast<float>(model.scaler.sigma[j]);
  }
  ckpt::write_record(os, "scaler.mu", mu);
  ckpt::write_record(os, "scaler.sigma", sigma);

  ckpt::write_pod<uint8_t>(os, 0);  // no optimizer block
  ckpt::write_pod<int32_t>(os, 0);
  ckpt::write_pod<double>(os, 0.0);
  if (!os) throw LoadError("write failure: " + path);
}

inline KernelSvmModel load_svm_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open checkpoint: " + path);
  ckpt::check_header(is, kKindSvm);
  const std::string topo = ckpt::read_str(is);
  if (topo.rfind("svm-rbf;", 0) != 0)
    throw LoadError("checkpoint topology is not an svm: " + topo);
  const uint32_t nrec = ckpt::read_pod<uint32_t>(is);
  std::map<std::string, ckpt::Record> recs;
  for (uint32_t i = 0; i < nrec; ++i) {
    ckpt::Record r = ckpt::read_record(is);
    const std::string name = r.name;
    recs[name] = std::move(r);
  }
  for (const char* need : {"sv", "coef", "hyper", "scaler.mu", "scaler.sigma"})
    if (recs.find(need) == recs.end())
      throw LoadError("svm checkpoint missing record '" + std::string(need) +
                      "'");

  KernelSvmModel model;
  const auto& svr = recs["sv"];
  if (svr.shape.size() != 2) throw LoadError("svm 'sv' record must be rank 2");
  model.sv = Tensor<float>(svr.shape);
  std::copy(svr.data.begin(), svr.data.end(), model.sv.data());

  const auto& coefr = recs["coef"];
  if (coefr.data.size() != static_cast<size_t>(model.sv.dim(0)))
    throw LoadError("svm 'coef' length does not match support vectors");
  model.coef.assign(coefr.data.begin(), coefr.data.end());

  const auto& hyper = recs["hyper"];
  if (hyper.data.size() != 3) throw LoadError("svm 'hyper' must hold 3 values");
  model.bias = hyper.data[0];
  model.gamma = hyper.data[1];
  model.c = hyper.data[2];

  const auto& mu = recs["scaler.mu"];
  const auto& sigma = recs["scaler.sigma"];
  if (mu.data.size() != static_cast<size_t>(model.sv.dim(1)) ||
      sigma.data.size() != mu.data.size())
    throw LoadError("svm scaler records do not match feature dimension");
  model.scaler.mu.assign(mu.data.begin(), mu.data.end());
  model.scaler.sigma.assign(sigma.data.begin(), sigma.data.end());
  return model;
}

}  // namespace rbcnet
