#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pgvi/design.hpp"

namespace pgvi {

// Joint parameter draws in [beta; alpha] stacking order plus per-effect
// covariance draws (each row one d*d matrix, row-major).
struct PosteriorDraws {
  Eigen::MatrixXd beta;                 // M x p
  Eigen::MatrixXd alpha;                // M x q
  std::vector<Eigen::MatrixXd> sigma;   // per effect: M x (d*d)
  std::string source;                   // raw_q | mavb_improper | mavb_proper | gibbs
  double tau2 = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 0;

  Eigen::Index M() const { return beta.rows(); }

  Eigen::MatrixXd sigma_draw(int j, Eigen::Index m) const {
    const auto& flat = sigma[static_cast<std::size_t>(j)];
    const int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(flat.cols()))));
    Eigen::MatrixXd S(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) S(r, c) = flat(m, r * d + c);
    return S;
  }

  void set_sigma_draw(int j, Eigen::Index m, const Eigen::MatrixXd& S) {
    auto& flat = sigma[static_cast<std::size_t>(j)];
    const int d = static_cast<int>(S.rows());
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) flat(m, r * d + c) = S(r, c);
  }
};

// Draw-matrix column labels matching a model's parameter stacking.
inline std::vector<std::string> draw_column_names(const ModelMeta& meta) {
  std::vector<std::string> names = meta.beta_names();
  const auto alpha = meta.alpha_names();
  names.insert(names.end(), alpha.begin(), alpha.end());
  const auto sig = meta.sigma_names();
  names.insert(names.end(), sig.begin(), sig.end());
  return names;
}

}  // namespace pgvi
