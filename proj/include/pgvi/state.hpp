#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "pgvi/design.hpp"
#include "pgvi/pgamma.hpp"
#include "pgvi/prior.hpp"

namespace pgvi {

// Mean-field factorizations over the Gaussian block:
//   I   q(beta) prod_j q(alpha_j)   (per-effect blocks, group-diagonal)
//   II  q(beta) q(alpha)            (one joint random-effect block)
//   III q(beta, alpha)              (single joint block)
enum class Scheme { I = 1, II = 2, III = 3 };

enum class Accel { none, px, joint, both };
enum class Init { em, random };
enum class StopReason { elbo_tol, param_tol, max_iter };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::I: return "1";
    case Scheme::II: return "2";
    default: return "3";
  }
}
inline const char* to_string(Accel a) {
  switch (a) {
    case Accel::none: return "none";
    case Accel::px: return "px";
    case Accel::joint: return "joint";
    default: return "both";
  }
}
inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::elbo_tol: return "elbo_tol";
    case StopReason::param_tol: return "param_tol";
    default: return "max_iter";
  }
}
inline const char* to_string(Init i) { return i == Init::em ? "em" : "random"; }

inline Scheme scheme_from_string(const std::string& s) {
  if (s == "1" || s == "I") return Scheme::I;
  if (s == "2" || s == "II") return Scheme::II;
  if (s == "3" || s == "III") return Scheme::III;
  throw DataError("unknown factorization scheme '" + s + "' (use 1, 2, or 3)");
}
inline Accel accel_from_string(const std::string& s) {
  if (s == "none") return Accel::none;
  if (s == "px") return Accel::px;
  if (s == "joint") return Accel::joint;
  if (s == "both") return Accel::both;
  throw DataError("unknown acceleration mode '" + s + "' (use none, px, joint, or both)");
}
inline Init init_from_string(const std::string& s) {
  if (s == "em") return Init::em;
  if (s == "random") return Init::random;
  throw DataError("unknown initialization '" + s + "' (use em or random)");
}

// Variational inverse-Wishart block for one effect.
struct IwBlock {
  double nu = 0;
  Eigen::MatrixXd Phi;
};

// All variational parameters. Covariance storage depends on the scheme:
// scheme I keeps per-group blocks only (never cross-effect), scheme II one
// q x q random-effect covariance, scheme III one (p+q) x (p+q) covariance.
struct VariationalState {
  Scheme scheme = Scheme::I;
  Eigen::VectorXd mu_beta;
  Eigen::VectorXd mu_alpha;
  Eigen::VectorXd pg_b, pg_c, pg_w;  // tilt parameters and E[omega]
  std::vector<IwBlock> iw;
  std::vector<Eigen::MatrixXd> sigma_einv;  // cached E[Sigma_j^{-1}] = nu Phi^{-1}

  Eigen::MatrixXd cov_beta;                             // schemes I, II
  std::vector<std::vector<Eigen::MatrixXd>> cov_alpha;  // scheme I: [effect][group]
  Eigen::MatrixXd cov_alpha_joint;                      // scheme II
  Eigen::MatrixXd cov_joint;                            // scheme III

  int p() const { return static_cast<int>(mu_beta.size()); }
  int q() const { return static_cast<int>(mu_alpha.size()); }

  void refresh_sigma_einv() {
    sigma_einv.resize(iw.size());
    for (std::size_t j = 0; j < iw.size(); ++j) {
      const Eigen::Index d = iw[j].Phi.rows();
      Eigen::LLT<Eigen::MatrixXd> llt(iw[j].Phi);
      if (llt.info() != Eigen::Success)
        throw NumericalError("variational scale matrix lost positive definiteness");
      sigma_einv[j] = iw[j].nu * llt.solve(Eigen::MatrixXd::Identity(d, d));
    }
  }

  // Marginal covariance of one group's coefficient block.
  Eigen::MatrixXd alpha_block_cov(const ModelMeta& meta, int j, int g) const {
    const auto& e = meta.effects[static_cast<std::size_t>(j)];
    const int at = e.col_offset + g * e.d;
    switch (scheme) {
      case Scheme::I:
        return cov_alpha[static_cast<std::size_t>(j)][static_cast<std::size_t>(g)];
      case Scheme::II:
        return cov_alpha_joint.block(at, at, e.d, e.d);
      default:
        return cov_joint.block(meta.p + at, meta.p + at, e.d, e.d);
    }
  }

  // Marginal posterior sds of the coefficients, scheme aware.
  Eigen::VectorXd beta_sds() const {
    if (scheme == Scheme::III) return cov_joint.diagonal().head(p()).cwiseSqrt();
    return cov_beta.diagonal().cwiseSqrt();
  }
  Eigen::VectorXd alpha_sds(const ModelMeta& meta) const {
    switch (scheme) {
      case Scheme::I: {
        Eigen::VectorXd s(q());
        for (int j = 0; j < meta.n_effects(); ++j) {
          const auto& e = meta.effects[static_cast<std::size_t>(j)];
          for (int g = 0; g < e.g; ++g)
            s.segment(e.col_offset + g * e.d, e.d) =
                cov_alpha[static_cast<std::size_t>(j)][static_cast<std::size_t>(g)]
                    .diagonal()
                    .cwiseSqrt();
        }
        return s;
      }
      case Scheme::II:
        return cov_alpha_joint.diagonal().cwiseSqrt();
      default:
        return cov_joint.diagonal().tail(q()).cwiseSqrt();
    }
  }

  // Var_q(psi_i) for every row, using only the blocks the scheme stores.
  Eigen::VectorXd predictor_variances(const DesignSet& d) const {
    const Eigen::Index N = d.N();
    Eigen::VectorXd v(N);
    switch (scheme) {
      case Scheme::I: {
        for (Eigen::Index i = 0; i < N; ++i) {
          double acc = d.X.row(i) * cov_beta * d.X.row(i).transpose();
          for (int j = 0; j < d.n_effects(); ++j) {
            const auto& zb = d.zb[static_cast<std::size_t>(j)];
            const int g = d.group[static_cast<std::size_t>(j)](i);
            const auto& B = cov_alpha[static_cast<std::size_t>(j)][static_cast<std::size_t>(g)];
            acc += zb.row(i) * B * zb.row(i).transpose();
          }
          v(i) = acc;
        }
        return v;
      }
      case Scheme::II: {
        std::vector<int> idx;
        std::vector<double> val;
        for (Eigen::Index i = 0; i < N; ++i) {
          double acc = d.X.row(i) * cov_beta * d.X.row(i).transpose();
          gather_alpha_row(d, i, idx, val);
          for (std::size_t a = 0; a < idx.size(); ++a)
            for (std::size_t b = 0; b < idx.size(); ++b)
              acc += val[a] * val[b] * cov_alpha_joint(idx[a], idx[b]);
          v(i) = acc;
        }
        return v;
      }
      default: {
        std::vector<int> idx;
        std::vector<double> val;
        for (Eigen::Index i = 0; i < N; ++i) {
          gather_joint_row(d, i, idx, val);
          double acc = 0;
          for (std::size_t a = 0; a < idx.size(); ++a)
            for (std::size_t b = 0; b < idx.size(); ++b)
              acc += val[a] * val[b] * cov_joint(idx[a], idx[b]);
          v(i) = acc;
        }
        return v;
      }
    }
  }

  // Nonzero pattern of row i of Z (alpha indexing).
  static void gather_alpha_row(const DesignSet& d, Eigen::Index i, std::vector<int>& idx,
                               std::vector<double>& val) {
    idx.clear();
    val.clear();
    for (int j = 0; j < d.n_effects(); ++j) {
      const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
      const int base = e.col_offset + d.group[static_cast<std::size_t>(j)](i) * e.d;
      for (int k = 0; k < e.d; ++k) {
        idx.push_back(base + k);
        val.push_back(d.zb[static_cast<std::size_t>(j)](i, k));
      }
    }
  }

  // Nonzero pattern of row i of [X Z] (joint indexing).
  static void gather_joint_row(const DesignSet& d, Eigen::Index i, std::vector<int>& idx,
                               std::vector<double>& val) {
    idx.clear();
    val.clear();
    for (int a = 0; a < d.p(); ++a) {
      idx.push_back(a);
      val.push_back(d.X(i, a));
    }
    for (int j = 0; j < d.n_effects(); ++j) {
      const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
      const int base = d.p() + e.col_offset + d.group[static_cast<std::size_t>(j)](i) * e.d;
      for (int k = 0; k < e.d; ++k) {
        idx.push_back(base + k);
        val.push_back(d.zb[static_cast<std::size_t>(j)](i, k));
      }
    }
  }

  // Entropy of the Gaussian block(s): (dim/2) ln(2 pi e) + (1/2) ln|cov|
  // summed over the scheme's independent blocks.
  double gaussian_entropy() const {
    constexpr double ln2pie = 2.8378770664093453;  // ln(2 pi e)
    auto half_logdet = [](const Eigen::MatrixXd& c) {
      if (c.rows() == 0) return 0.0;
      Eigen::LLT<Eigen::MatrixXd> llt(c);
      if (llt.info() != Eigen::Success)
        throw NumericalError("covariance block lost positive definiteness");
      return Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    };
    switch (scheme) {
      case Scheme::I: {
        double h = 0.5 * p() * ln2pie + half_logdet(cov_beta);
        for (const auto& blocks : cov_alpha)
          for (const auto& B : blocks) h += 0.5 * B.rows() * ln2pie + half_logdet(B);
        return h;
      }
      case Scheme::II:
        return 0.5 * (p() + q()) * ln2pie + half_logdet(cov_beta) + half_logdet(cov_alpha_joint);
      default:
        return 0.5 * (p() + q()) * ln2pie + half_logdet(cov_joint);
    }
  }
};

// Wall-clock totals per update stage, cumulated over iterations.
struct StageTimings {
  double pg = 0, gaussian = 0, sigma = 0, pxvb = 0, elbo = 0;
};

struct FitOptions {
  Scheme scheme = Scheme::III;
  Accel accel = Accel::both;
  double tol_elbo = 1e-8;
  double tol_param = 1e-5;
  int max_iter = 1000;
  Init init = Init::em;
  std::uint64_t seed = 0;  // consumed by the random initializer
};

struct FitReport {
  VariationalState state;
  std::vector<double> elbo_trace;
  int iterations = 0;
  StopReason converged_by = StopReason::max_iter;
  double final_param_change = std::numeric_limits<double>::quiet_NaN();
  StageTimings timings;
  FitOptions options;
};

}  // namespace pgvi
