#pragma once

#include <Eigen/Dense>
#include <vector>

#include "pgvi/design.hpp"

namespace pgvi {

// Inverse-Wishart hyperparameters for one random effect.
struct EffectPrior {
  double nu = 0;
  Eigen::MatrixXd Phi;
};

// Per-effect covariance priors plus the working-prior variance used by the
// proper post-processing expansion.
struct PriorSpec {
  std::vector<EffectPrior> effects;
  double tau2 = 1.0;

  // Weakly informative default: IW(d_j + 1, I) for every effect.
  static PriorSpec standard(const ModelMeta& meta) {
    PriorSpec p;
    for (const auto& e : meta.effects)
      p.effects.push_back({static_cast<double>(e.d) + 1.0,
                           Eigen::MatrixXd::Identity(e.d, e.d)});
    return p;
  }

  void validate(const ModelMeta& meta) const {
    if (effects.size() != meta.effects.size())
      throw DataError("prior specifies a different number of random effects than the model");
    for (std::size_t j = 0; j < effects.size(); ++j) {
      const int d = meta.effects[j].d;
      if (effects[j].Phi.rows() != d || effects[j].Phi.cols() != d)
        throw DataError("prior scale dimension mismatch for effect '" + meta.effects[j].name + "'");
      if (!(effects[j].nu > d - 1))
        throw DataError("prior degrees of freedom must exceed d - 1 for effect '" +
                        meta.effects[j].name + "'");
      Eigen::LLT<Eigen::MatrixXd> llt(effects[j].Phi);
      if (llt.info() != Eigen::Success)
        throw DataError("prior scale matrix is not positive definite for effect '" +
                        meta.effects[j].name + "'");
    }
    if (!(tau2 > 0)) throw DataError("working-prior variance must be positive");
  }
};

}  // namespace pgvi
