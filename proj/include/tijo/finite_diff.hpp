#pragma once

// Central-difference gradient oracle. Independent of every analytic backward pass.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace tijo {

/// Numerical gradient of scalar `f` at `x` by central differences with step h.
template <typename MatrixType, typename F>
MatrixType central_difference(F&& f, MatrixType x, double h = 1e-5) {
  MatrixType grad = MatrixType::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f(x);
    x.data()[i] = saved - h;
    const double down = f(x);
    x.data()[i] = saved;
    grad.data()[i] = (up - down) / (2 * h);
  }
  return grad;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
template <typename A, typename B>
double relative_error(const Eigen::MatrixBase<A>& analytic, const Eigen::MatrixBase<B>& numeric) {
  const double scale = std::max(analytic.norm(), numeric.norm());
  if (scale == 0) return 0;
  return (analytic - numeric).norm() / scale;
}

}  // namespace tijo
