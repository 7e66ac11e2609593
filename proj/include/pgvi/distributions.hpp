#pragma once

#include <Eigen/Dense>

#include "pgvi/common.hpp"

namespace pgvi {

inline Eigen::VectorXd std_normal_vector(Eigen::Index k, Rng& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd z(k);
  for (Eigen::Index i = 0; i < k; ++i) z(i) = nd(rng);
  return z;
}

// Lower Cholesky factor of an SPD matrix, with a descriptive failure.
inline Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string(what) + " is not positive definite");
  return llt.matrixL();
}

// Draw from N(mu, L L') given the lower factor L.
inline Eigen::VectorXd sample_mvn_chol(const Eigen::VectorXd& mu, const Eigen::MatrixXd& L,
                                       Rng& rng) {
  return mu + L * std_normal_vector(mu.size(), rng);
}

// Inverse-Wishart(nu, Phi) draw via the Bartlett construction: with A the
// Bartlett lower factor of Wishart(nu, I) and Phi = L L' (L given), the draw
// is B'B for B = A^{-1} L'.
inline Eigen::MatrixXd sample_iw_chol(double nu, const Eigen::MatrixXd& L, Rng& rng) {
  const Eigen::Index d = L.rows();
  if (nu <= d - 1) throw NumericalError("inverse-Wishart degrees of freedom too small");
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    std::chi_squared_distribution<double> chi(nu - static_cast<double>(i));
    A(i, i) = std::sqrt(chi(rng));
    for (Eigen::Index j = 0; j < i; ++j) A(i, j) = nd(rng);
  }
  const Eigen::MatrixXd B =
      A.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd(L.transpose()));
  return B.transpose() * B;
}

inline Eigen::MatrixXd sample_iw(double nu, const Eigen::MatrixXd& Phi, Rng& rng) {
  return sample_iw_chol(nu, cholesky_lower(Phi, "inverse-Wishart scale"), rng);
}

}  // namespace pgvi
