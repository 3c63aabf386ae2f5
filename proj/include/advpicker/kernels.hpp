#pragma once

// Scalar-generic dense kernels shared by the autodiff ops, decoding and
// analysis code. They take any Eigen expression and return plain matrices.

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace advpicker::kernels {

template <typename Derived>
using PlainMatrix = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Row-wise softmax with max subtraction.
template <typename Derived>
PlainMatrix<Derived> softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  PlainMatrix<Derived> out = logits;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return out;
}

template <typename Derived>
PlainMatrix<Derived> sigmoid(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) {
    if (v >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-v));
    const Scalar e = std::exp(v);
    return e / (Scalar(1) + e);
  });
}

template <typename Derived>
PlainMatrix<Derived> relu(const Eigen::MatrixBase<Derived>& x) {
  return x.cwiseMax(typename Derived::Scalar(0));
}

/// log(p) with zero mapped to the smallest finite log so paths stay comparable.
template <typename Derived>
PlainMatrix<Derived> safe_log(const Eigen::MatrixBase<Derived>& p) {
  using Scalar = typename Derived::Scalar;
  return p.unaryExpr([](Scalar v) {
    return std::log(std::max(v, std::numeric_limits<Scalar>::min()));
  });
}

/// Per-row sum of the maximum entry, i.e. the confidence of the argmax label.
template <typename Derived>
typename Derived::Scalar max_confidence_sum(const Eigen::MatrixBase<Derived>& probs) {
  return probs.rowwise().maxCoeff().sum();
}

}  // namespace advpicker::kernels
