#pragma once

#include <cmath>
#include <functional>

#include "rbcnet/errors.hpp"
#include "rbcnet/tensor.hpp"

namespace rbcnet {

// |a - b| / max(1e-8, |a| + |b|)
inline double relative_error(double a, double b) {
  return std::fabs(a - b) / std::max(1e-8, std::fabs(a) + std::fabs(b));
}

template <typename T>
double max_relative_error(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("max_relative_error shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, relative_error(static_cast<double>(a[i]),
                                           static_cast<double>(b[i])));
  return worst;
}

// Central-difference gradient of a scalar function. Function values are
// taken as double; the divisor is the realized step x_plus - x_minus, which
// equals 2h up to storage rounding of the perturbed coordinates.
template <typename T>
Tensor<T> finite_diff_gradient(const std::function<double(const Tensor<T>&)>& f,
                               const Tensor<T>& x, double h = 1e-3) {
  Tensor<T> grad(x.shape(), T(0));
  Tensor<T> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    const T orig = x[i];
    const T xp = static_cast<T>(static_cast<double>(orig) + h);
    const T xm = static_cast<T>(static_cast<double>(orig) - h);
    probe[i] = xp;
    const double fp = f(probe);
    probe[i] = xm;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw OracleError("non-finite function value in finite differences");
    const double denom = static_cast<double>(xp) - static_cast<double>(xm);
    grad[i] = static_cast<T>((fp - fm) / denom);
  }
  return grad;
}

}  // namespace rbcnet
