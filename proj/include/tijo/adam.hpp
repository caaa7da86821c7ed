#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace tijo {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Feature-trigger and patch optimizers use lr 0.1 / 0.03 with betas (0.5, 0.9).
inline constexpr AdamConfig kTriggerAdam{0.1, 0.5, 0.9, 1e-8};
inline constexpr AdamConfig kPatchAdam{0.03, 0.5, 0.9, 1e-8};

template <typename MatrixType>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  MatrixType first_moment;
  MatrixType second_moment;

  AdamState() = default;
  AdamState(const AdamConfig& cfg, Eigen::Index rows, Eigen::Index cols)
      : config(cfg),
        first_moment(MatrixType::Zero(rows, cols)),
        second_moment(MatrixType::Zero(rows, cols)) {}

  template <typename Like>
  static AdamState like(const AdamConfig& cfg, const Eigen::MatrixBase<Like>& variable) {
    return AdamState(cfg, variable.rows(), variable.cols());
  }
};

/// One bias-corrected Adam update of `variable` in place.
template <typename MatrixType, typename GradDerived>
void adam_step(AdamState<MatrixType>& state, MatrixType& variable,
               const Eigen::MatrixBase<GradDerived>& gradient) {
  if (gradient.rows() != variable.rows() || gradient.cols() != variable.cols() ||
      state.first_moment.rows() != variable.rows() ||
      state.first_moment.cols() != variable.cols()) {
    throw std::invalid_argument("adam_step: shape mismatch between state, variable and gradient");
  }
  const auto& c = state.config;
  ++state.step;
  state.first_moment = c.beta1 * state.first_moment + (1 - c.beta1) * gradient;
  state.second_moment =
      c.beta2 * state.second_moment + (1 - c.beta2) * gradient.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double m_corr = 1 - std::pow(c.beta1, t);
  const double v_corr = 1 - std::pow(c.beta2, t);
  variable.array() -= c.lr * (state.first_moment.array() / m_corr) /
                      ((state.second_moment.array() / v_corr).sqrt() + c.eps);
}

}  // namespace tijo
