#pragma once

#include <Eigen/Dense>

namespace stochabs {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline double inf_norm(const Vector& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// Spectral norm (largest singular value).
inline double spectral_norm(const Matrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(a);
  return svd.singularValues()(0);
}

inline double max_eig_sym(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

inline double min_eig_sym(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

}  // namespace stochabs
