#pragma once

// Differentiable primitives for the fixed fusion-model family.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace tijo {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::MatrixBase<Derived>& logits) {
  const auto peak = logits.maxCoeff();
  return peak + std::log((logits.array() - peak).exp().sum());
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> softmax(
    const Eigen::MatrixBase<Derived>& logits) {
  const auto shifted = (logits.array() - logits.maxCoeff()).exp().eval();
  return (shifted / shifted.sum()).matrix();
}

inline void check_label(Eigen::Index classes, int label) {
  if (label < 0 || label >= classes) {
    throw std::domain_error("class label " + std::to_string(label) +
                            " outside [0, " + std::to_string(classes) + ")");
  }
}

/// -log softmax(logits)[label].
template <typename Derived>
typename Derived::Scalar cross_entropy(const Eigen::MatrixBase<Derived>& logits,
                                       int label) {
  check_label(logits.size(), label);
  const auto value = log_sum_exp(logits) - logits(label);
  // Rounding can leave a tiny negative value when the label saturates.
  return value < 0 ? typename Derived::Scalar(0) : value;
}

/// d cross_entropy / d logits = softmax(logits) - onehot(label).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> cross_entropy_grad(
    const Eigen::MatrixBase<Derived>& logits, int label) {
  check_label(logits.size(), label);
  auto grad = softmax(logits);
  grad(label) -= 1;
  return grad;
}

/// Shannon entropy (natural log) of a probability vector.
template <typename Derived>
typename Derived::Scalar entropy(const Eigen::MatrixBase<Derived>& probs) {
  typename Derived::Scalar h = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs(i) > 0) h -= probs(i) * std::log(probs(i));
  }
  return h;
}

template <typename Derived>
auto relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

/// Subgradient mask of ReLU; the subgradient at exactly zero is 0.
template <typename Derived>
auto relu_mask(const Eigen::MatrixBase<Derived>& x) {
  return (x.array() > typename Derived::Scalar(0)).template cast<typename Derived::Scalar>();
}

template <typename Derived>
Eigen::Index argmax(const Eigen::MatrixBase<Derived>& x) {
  Eigen::Index best = 0;
  x.maxCoeff(&best);
  return best;
}

}  // namespace tijo
