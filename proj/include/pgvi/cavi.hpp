#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <boost/math/special_functions/digamma.hpp>
#include <chrono>
#include <vector>

#include "pgvi/distributions.hpp"
#include "pgvi/state.hpp"

namespace pgvi {

namespace detail {

// Dense [X Z]' diag(w) [X Z] accumulated row by row (rows are short: p plus
// one d_j block per effect).
inline Eigen::MatrixXd joint_information(const DesignSet& d, const Eigen::VectorXd& w) {
  const int m = d.p() + d.q();
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m, m);
  std::vector<int> idx;
  std::vector<double> val;
  for (Eigen::Index i = 0; i < d.N(); ++i) {
    VariationalState::gather_joint_row(d, i, idx, val);
    const double wi = w(i);
    for (std::size_t a = 0; a < idx.size(); ++a) {
      const double wa = wi * val[a];
      for (std::size_t b = a; b < idx.size(); ++b) H(idx[a], idx[b]) += wa * val[b];
    }
  }
  return H.selfadjointView<Eigen::Upper>();
}

// Dense Z' diag(w) Z (random-effect block only).
inline Eigen::MatrixXd alpha_information(const DesignSet& d, const Eigen::VectorXd& w) {
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(d.q(), d.q());
  std::vector<int> idx;
  std::vector<double> val;
  for (Eigen::Index i = 0; i < d.N(); ++i) {
    VariationalState::gather_alpha_row(d, i, idx, val);
    const double wi = w(i);
    for (std::size_t a = 0; a < idx.size(); ++a) {
      const double wa = wi * val[a];
      for (std::size_t b = a; b < idx.size(); ++b) H(idx[a], idx[b]) += wa * val[b];
    }
  }
  return H.selfadjointView<Eigen::Upper>();
}

// Adds blockdiag_j(I_{g_j} (x) E[Sigma_j^{-1}]) at a given column offset.
inline void add_prior_precision(const DesignSet& d, const VariationalState& st, int at,
                                Eigen::MatrixXd& H) {
  for (int j = 0; j < d.n_effects(); ++j) {
    const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
    const auto& einv = st.sigma_einv[static_cast<std::size_t>(j)];
    for (int g = 0; g < e.g; ++g)
      H.block(at + e.col_offset + g * e.d, at + e.col_offset + g * e.d, e.d, e.d) += einv;
  }
}

// Sparse Cholesky of the joint penalized information matrix; the posterior
// covariance is recovered by triangular inversion of the factor (a solve
// against the identity). At larger scales a selected inversion of the same
// factor would replace the full solve.
struct JointSystem {
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt;

  explicit JointSystem(const Eigen::MatrixXd& H) {
    const Eigen::SparseMatrix<double> Hs = H.sparseView();
    llt.compute(Hs);
    if (llt.info() != Eigen::Success)
      throw NumericalError("joint information matrix is not positive definite");
  }
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return llt.solve(rhs); }
  Eigen::MatrixXd inverse(int m) const {
    return llt.solve(Eigen::MatrixXd::Identity(m, m));
  }
};

inline Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& A, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string(what) + " is not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
}

}  // namespace detail

// Refreshes the tilt parameters: b_i = n_i and c_i^2 = E_q[psi_i^2] under
// the current Gaussian block, plus the cached E[omega_i].
inline void update_pg(const DesignSet& d, VariationalState& st) {
  const Eigen::VectorXd mean = d.X * st.mu_beta + d.Z * st.mu_alpha;
  const Eigen::VectorXd var = st.predictor_variances(d);
  const Eigen::Index N = d.N();
  st.pg_b = d.n;
  st.pg_c.resize(N);
  st.pg_w.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    st.pg_c(i) = std::sqrt(mean(i) * mean(i) + std::max(0.0, var(i)));
    st.pg_w(i) = pg_mean(st.pg_b(i), st.pg_c(i));
  }
}

// Fixed-effect block update (schemes I and II):
//   cov = (X' W X)^{-1},  mu = cov X'(s - W Z mu_alpha).
inline void update_beta(const DesignSet& d, VariationalState& st) {
  const Eigen::VectorXd& w = st.pg_w;
  const Eigen::MatrixXd A = d.X.transpose() * w.asDiagonal() * d.X;
  st.cov_beta = detail::spd_inverse(A, "fixed-effect information matrix");
  const Eigen::VectorXd zpart = d.Z * st.mu_alpha;
  st.mu_beta = st.cov_beta *
               (d.X.transpose() * (d.s - w.cwiseProduct(zpart)));
}

// Random-effect update. Scheme I sweeps the effects in formula order with
// per-group blocks; scheme II solves one joint q x q system.
inline void update_alpha(const DesignSet& d, VariationalState& st) {
  const Eigen::VectorXd& w = st.pg_w;
  if (st.scheme == Scheme::II) {
    Eigen::MatrixXd A = detail::alpha_information(d, w);
    detail::add_prior_precision(d, st, 0, A);
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success)
      throw NumericalError("random-effect information matrix is not positive definite");
    st.cov_alpha_joint = llt.solve(Eigen::MatrixXd::Identity(d.q(), d.q()));
    const Eigen::VectorXd xpart = d.X * st.mu_beta;
    st.mu_alpha = llt.solve(d.Z.transpose() * (d.s - w.cwiseProduct(xpart)));
    return;
  }

  Eigen::VectorXd psi = d.X * st.mu_beta + d.Z * st.mu_alpha;
  st.cov_alpha.resize(static_cast<std::size_t>(d.n_effects()));
  for (int j = 0; j < d.n_effects(); ++j) {
    const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
    const auto& zb = d.zb[static_cast<std::size_t>(j)];
    const auto& grp = d.group[static_cast<std::size_t>(j)];
    const auto& einv = st.sigma_einv[static_cast<std::size_t>(j)];

    std::vector<Eigen::MatrixXd> A(static_cast<std::size_t>(e.g), einv);
    std::vector<Eigen::VectorXd> rhs(static_cast<std::size_t>(e.g),
                                     Eigen::VectorXd::Zero(e.d));
    const Eigen::VectorXd old = st.mu_alpha.segment(e.col_offset, e.g * e.d);
    for (Eigen::Index i = 0; i < d.N(); ++i) {
      const int g = grp(i);
      const auto zrow = zb.row(i).transpose();
      const double own = zrow.dot(old.segment(g * e.d, e.d));
      const double r = d.s(i) - w(i) * (psi(i) - own);
      A[static_cast<std::size_t>(g)].noalias() += w(i) * zrow * zrow.transpose();
      rhs[static_cast<std::size_t>(g)].noalias() += r * zrow;
    }
    auto& blocks = st.cov_alpha[static_cast<std::size_t>(j)];
    blocks.resize(static_cast<std::size_t>(e.g));
    for (int g = 0; g < e.g; ++g) {
      Eigen::LLT<Eigen::MatrixXd> llt(A[static_cast<std::size_t>(g)]);
      if (llt.info() != Eigen::Success)
        throw NumericalError("group information block is not positive definite");
      blocks[static_cast<std::size_t>(g)] =
          llt.solve(Eigen::MatrixXd::Identity(e.d, e.d));
      st.mu_alpha.segment(e.col_offset + g * e.d, e.d) =
          llt.solve(rhs[static_cast<std::size_t>(g)]);
    }
    for (Eigen::Index i = 0; i < d.N(); ++i) {
      const int g = grp(i);
      psi(i) += zb.row(i).dot(st.mu_alpha.segment(e.col_offset + g * e.d, e.d) -
                              old.segment(g * e.d, e.d));
    }
  }
}

// Scheme III block update: one Gaussian over (beta, alpha) with
//   cov = ([X Z]' W [X Z] + blockdiag(0, T))^{-1},  mean = cov [X Z]' s.
inline void update_joint(const DesignSet& d, VariationalState& st) {
  const int m = d.p() + d.q();
  Eigen::MatrixXd H = detail::joint_information(d, st.pg_w);
  detail::add_prior_precision(d, st, d.p(), H);
  detail::JointSystem sys(H);
  st.cov_joint = sys.inverse(m);
  const Eigen::VectorXd mu = sys.solve(d.XZ.transpose() * d.s);
  st.mu_beta = mu.head(d.p());
  st.mu_alpha = mu.tail(d.q());
}

// Accelerated mean pass: solves the scheme III mean system for all means at
// once, leaving every covariance block untouched.
inline void joint_mean_update(const DesignSet& d, VariationalState& st) {
  Eigen::MatrixXd H = detail::joint_information(d, st.pg_w);
  detail::add_prior_precision(d, st, d.p(), H);
  detail::JointSystem sys(H);
  const Eigen::VectorXd mu = sys.solve(d.XZ.transpose() * d.s);
  st.mu_beta = mu.head(d.p());
  st.mu_alpha = mu.tail(d.q());
}

// Covariance-only refresh at the current tilt; the Gaussian means do not
// enter any covariance formula.
inline void update_covariances(const DesignSet& d, VariationalState& st) {
  const Eigen::VectorXd& w = st.pg_w;
  switch (st.scheme) {
    case Scheme::I: {
      st.cov_beta =
          detail::spd_inverse(d.X.transpose() * w.asDiagonal() * d.X,
                              "fixed-effect information matrix");
      st.cov_alpha.resize(static_cast<std::size_t>(d.n_effects()));
      for (int j = 0; j < d.n_effects(); ++j) {
        const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
        const auto& zb = d.zb[static_cast<std::size_t>(j)];
        const auto& grp = d.group[static_cast<std::size_t>(j)];
        std::vector<Eigen::MatrixXd> A(static_cast<std::size_t>(e.g),
                                       st.sigma_einv[static_cast<std::size_t>(j)]);
        for (Eigen::Index i = 0; i < d.N(); ++i) {
          const auto zrow = zb.row(i).transpose();
          A[static_cast<std::size_t>(grp(i))].noalias() += w(i) * zrow * zrow.transpose();
        }
        auto& blocks = st.cov_alpha[static_cast<std::size_t>(j)];
        blocks.resize(static_cast<std::size_t>(e.g));
        for (int g = 0; g < e.g; ++g)
          blocks[static_cast<std::size_t>(g)] =
              detail::spd_inverse(A[static_cast<std::size_t>(g)], "group information block");
      }
      break;
    }
    case Scheme::II: {
      st.cov_beta =
          detail::spd_inverse(d.X.transpose() * w.asDiagonal() * d.X,
                              "fixed-effect information matrix");
      Eigen::MatrixXd A = detail::alpha_information(d, w);
      detail::add_prior_precision(d, st, 0, A);
      st.cov_alpha_joint = detail::spd_inverse(A, "random-effect information matrix");
      break;
    }
    default: {
      Eigen::MatrixXd H = detail::joint_information(d, w);
      detail::add_prior_precision(d, st, d.p(), H);
      detail::JointSystem sys(H);
      st.cov_joint = sys.inverse(d.p() + d.q());
      break;
    }
  }
}

// Variational inverse-Wishart update:
//   nu_j = nu0_j + g_j,  Phi_j = Phi0_j + sum_g (mu mu' + Cov(alpha_{jg})).
inline void update_sigma(const DesignSet& d, const PriorSpec& prior, VariationalState& st) {
  st.iw.resize(static_cast<std::size_t>(d.n_effects()));
  for (int j = 0; j < d.n_effects(); ++j) {
    const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
    Eigen::MatrixXd Phi = prior.effects[static_cast<std::size_t>(j)].Phi;
    for (int g = 0; g < e.g; ++g) {
      const auto mu = st.mu_alpha.segment(e.col_offset + g * e.d, e.d);
      Phi.noalias() += mu * mu.transpose();
      Phi += st.alpha_block_cov(d.meta, j, g);
    }
    st.iw[static_cast<std::size_t>(j)].nu =
        prior.effects[static_cast<std::size_t>(j)].nu + e.g;
    st.iw[static_cast<std::size_t>(j)].Phi = std::move(Phi);
  }
  st.refresh_sigma_einv();
}

// Location expansion-reduction: recenters each effect's group means at zero
// and moves the total shift into the fixed effects through the M_j mapping.
// The linear predictor is unchanged and the bound never decreases.
inline void pxvb_reduce(const DesignSet& d, VariationalState& st) {
  for (int j = 0; j < d.n_effects(); ++j) {
    const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
    if (e.g == 0) continue;
    Eigen::VectorXd center = Eigen::VectorXd::Zero(e.d);
    for (int g = 0; g < e.g; ++g)
      center += st.mu_alpha.segment(e.col_offset + g * e.d, e.d);
    center /= static_cast<double>(e.g);
    for (int g = 0; g < e.g; ++g)
      st.mu_alpha.segment(e.col_offset + g * e.d, e.d) -= center;
    for (int k = 0; k < e.d; ++k)
      st.mu_beta(e.fixed_index[static_cast<std::size_t>(k)]) += center(k);
  }
}

namespace detail {

inline double log_multigamma(int d, double a) {
  double r = 0.25 * d * (d - 1) * std::log(pi);
  for (int k = 0; k < d; ++k) r += std::lgamma(a - 0.5 * k);
  return r;
}

inline double spd_logdet(const Eigen::MatrixXd& A, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string(what) + " is not positive definite");
  return 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
}

// ln of the inverse-Wishart normalizing constant c(nu, Phi).
inline double iw_lognorm(double nu, const Eigen::MatrixXd& Phi) {
  const int d = static_cast<int>(Phi.rows());
  return 0.5 * nu * spd_logdet(Phi, "inverse-Wishart scale") -
         0.5 * nu * d * std::log(2.0) - log_multigamma(d, 0.5 * nu);
}

// E[ln|Sigma|] under IW(nu, Phi).
inline double iw_e_logdet(double nu, const Eigen::MatrixXd& Phi) {
  const int d = static_cast<int>(Phi.rows());
  double r = spd_logdet(Phi, "inverse-Wishart scale") - d * std::log(2.0);
  for (int k = 1; k <= d; ++k) r -= boost::math::digamma(0.5 * (nu - k + 1));
  return r;
}

}  // namespace detail

// Evidence lower bound at the current variational state. The intractable
// PG(b, 0) log-density expectations cancel between the complete-data term
// and the PG entropy; their net contribution is pg_elbo_terms.
inline double elbo(const DesignSet& d, const PriorSpec& prior, const VariationalState& st) {
  constexpr double ln2pi = 1.8378770664093453;
  const Eigen::VectorXd m = d.X * st.mu_beta + d.Z * st.mu_alpha;
  const Eigen::VectorXd v = st.predictor_variances(d);
  const Eigen::VectorXd& w = st.pg_w;

  double val = -std::log(2.0) * d.n.sum();
  val += d.s.dot(m);
  val -= 0.5 * (w.array() * (m.array().square() + v.array())).sum();
  val += pg_elbo_terms(st.pg_b, st.pg_c);

  for (int j = 0; j < d.n_effects(); ++j) {
    const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
    const auto& iwj = st.iw[static_cast<std::size_t>(j)];
    const auto& einv = st.sigma_einv[static_cast<std::size_t>(j)];
    const auto& pr = prior.effects[static_cast<std::size_t>(j)];
    const double elog = detail::iw_e_logdet(iwj.nu, iwj.Phi);

    double S = 0;
    for (int g = 0; g < e.g; ++g) {
      const auto mu = st.mu_alpha.segment(e.col_offset + g * e.d, e.d);
      S += mu.dot(einv * mu) + (einv * st.alpha_block_cov(d.meta, j, g)).trace();
    }
    val += -0.5 * e.d * e.g * ln2pi - 0.5 * e.g * elog - 0.5 * S;
    val += detail::iw_lognorm(pr.nu, pr.Phi) - 0.5 * (pr.nu + e.d + 1) * elog -
           0.5 * (pr.Phi * einv).trace();
    val += -detail::iw_lognorm(iwj.nu, iwj.Phi) + 0.5 * (iwj.nu + e.d + 1) * elog +
           0.5 * (iwj.Phi * einv).trace();
  }
  val += st.gaussian_entropy();
  return val;
}

// Penalized IRLS warm start: 25 reweighted ridge passes (flat on beta,
// unit ridge on alpha), then one covariance/scale/tilt pass at those means.
inline VariationalState init_em(const DesignSet& d, const PriorSpec& prior, Scheme scheme) {
  prior.validate(d.meta);
  const int m = d.p() + d.q();
  const double lambda = 1.0;
  const Eigen::Index N = d.N();

  Eigen::VectorXd eta = Eigen::VectorXd::Zero(N);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd wls(N), zwork(N);
  for (int it = 0; it < 25; ++it) {
    for (Eigen::Index i = 0; i < N; ++i) {
      const double pr = std::min(1.0 - 1e-10, std::max(1e-10, logistic(eta(i))));
      wls(i) = std::max(1e-10, d.n(i) * pr * (1.0 - pr));
      zwork(i) = eta(i) + (d.y(i) - d.n(i) * pr) / wls(i);
    }
    Eigen::MatrixXd H = detail::joint_information(d, wls);
    for (int a = d.p(); a < m; ++a) H(a, a) += lambda;
    detail::JointSystem sys(H);
    theta = sys.solve(d.XZ.transpose() * wls.cwiseProduct(zwork));
    eta = d.XZ * theta;
  }

  VariationalState st;
  st.scheme = scheme;
  st.mu_beta = theta.head(d.p());
  st.mu_alpha = theta.tail(d.q());

  st.iw.resize(static_cast<std::size_t>(d.n_effects()));
  for (int j = 0; j < d.n_effects(); ++j) {
    const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
    Eigen::MatrixXd Phi = prior.effects[static_cast<std::size_t>(j)].Phi;
    for (int g = 0; g < e.g; ++g) {
      const auto mu = st.mu_alpha.segment(e.col_offset + g * e.d, e.d);
      Phi.noalias() += mu * mu.transpose();
    }
    st.iw[static_cast<std::size_t>(j)].nu =
        prior.effects[static_cast<std::size_t>(j)].nu + e.g;
    st.iw[static_cast<std::size_t>(j)].Phi = std::move(Phi);
  }
  st.refresh_sigma_einv();

  st.pg_b = d.n;
  st.pg_c = eta.cwiseAbs();
  st.pg_w.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) st.pg_w(i) = pg_mean(st.pg_b(i), st.pg_c(i));
  update_covariances(d, st);
  return st;
}

// Overdispersed start: standard-normal means, zeroed Gaussian covariance
// storage, and a variational scale drawn from IW(d_j + 1, I).
inline VariationalState init_random(const DesignSet& d, const PriorSpec& prior, Scheme scheme,
                                    Rng& rng) {
  prior.validate(d.meta);
  VariationalState st;
  st.scheme = scheme;
  st.mu_beta = std_normal_vector(d.p(), rng);
  st.mu_alpha = std_normal_vector(d.q(), rng);

  st.iw.resize(static_cast<std::size_t>(d.n_effects()));
  for (int j = 0; j < d.n_effects(); ++j) {
    const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
    st.iw[static_cast<std::size_t>(j)].nu =
        prior.effects[static_cast<std::size_t>(j)].nu + e.g;
    st.iw[static_cast<std::size_t>(j)].Phi =
        sample_iw(e.d + 1.0, Eigen::MatrixXd::Identity(e.d, e.d), rng);
  }
  st.refresh_sigma_einv();

  switch (scheme) {
    case Scheme::I: {
      st.cov_beta = Eigen::MatrixXd::Zero(d.p(), d.p());
      st.cov_alpha.assign(static_cast<std::size_t>(d.n_effects()), {});
      for (int j = 0; j < d.n_effects(); ++j) {
        const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
        st.cov_alpha[static_cast<std::size_t>(j)].assign(
            static_cast<std::size_t>(e.g), Eigen::MatrixXd::Zero(e.d, e.d));
      }
      break;
    }
    case Scheme::II:
      st.cov_beta = Eigen::MatrixXd::Zero(d.p(), d.p());
      st.cov_alpha_joint = Eigen::MatrixXd::Zero(d.q(), d.q());
      break;
    default:
      st.cov_joint = Eigen::MatrixXd::Zero(d.p() + d.q(), d.p() + d.q());
      break;
  }

  const Eigen::VectorXd eta = d.X * st.mu_beta + d.Z * st.mu_alpha;
  st.pg_b = d.n;
  st.pg_c = eta.cwiseAbs();
  st.pg_w.resize(d.N());
  for (Eigen::Index i = 0; i < d.N(); ++i) st.pg_w(i) = pg_mean(st.pg_b(i), st.pg_c(i));
  return st;
}

// Coordinate-ascent driver. Each pass runs tilt -> Gaussian block(s) ->
// scale -> optional recentering, evaluates the bound, and stops on a small
// bound change, a small max-abs parameter change, or the iteration cap.
inline FitReport fit(const DesignSet& d, const PriorSpec& prior, const FitOptions& opts) {
  prior.validate(d.meta);
  FitReport rep;
  rep.options = opts;

  VariationalState st;
  if (opts.init == Init::em) {
    st = init_em(d, prior, opts.scheme);
  } else {
    Rng rng = make_rng(opts.seed, 0xD1CE);
    st = init_random(d, prior, opts.scheme, rng);
  }

  const bool with_px = opts.accel == Accel::px || opts.accel == Accel::both;
  const bool joint_means = opts.accel == Accel::joint || opts.accel == Accel::both;

  using clock = std::chrono::steady_clock;
  auto lap = [](clock::time_point& t0) {
    const auto t1 = clock::now();
    const double sec = std::chrono::duration<double>(t1 - t0).count();
    t0 = t1;
    return sec;
  };

  double prev_elbo = std::numeric_limits<double>::quiet_NaN();
  std::vector<Eigen::MatrixXd> phi0;
  for (int t = 1; t <= opts.max_iter; ++t) {
    const Eigen::VectorXd mu_beta0 = st.mu_beta;
    const Eigen::VectorXd mu_alpha0 = st.mu_alpha;
    const Eigen::VectorXd c0 = st.pg_c;
    phi0.clear();
    for (const auto& b : st.iw) phi0.push_back(b.Phi);

    auto t0 = clock::now();
    update_pg(d, st);
    rep.timings.pg += lap(t0);

    if (st.scheme == Scheme::III) {
      update_joint(d, st);
    } else if (joint_means) {
      joint_mean_update(d, st);
      update_covariances(d, st);
    } else {
      update_beta(d, st);
      update_alpha(d, st);
    }
    rep.timings.gaussian += lap(t0);

    update_sigma(d, prior, st);
    rep.timings.sigma += lap(t0);

    if (with_px) {
      pxvb_reduce(d, st);
      rep.timings.pxvb += lap(t0);
    }

    const double e = elbo(d, prior, st);
    rep.timings.elbo += lap(t0);
    rep.elbo_trace.push_back(e);
    if (!std::isfinite(e)) throw NumericalError("objective became non-finite");

    double dp = 0;
    dp = std::max(dp, (st.mu_beta - mu_beta0).cwiseAbs().maxCoeff());
    if (d.q() > 0) dp = std::max(dp, (st.mu_alpha - mu_alpha0).cwiseAbs().maxCoeff());
    dp = std::max(dp, (st.pg_c - c0).cwiseAbs().maxCoeff());
    for (std::size_t j = 0; j < phi0.size(); ++j)
      dp = std::max(dp, (st.iw[j].Phi - phi0[j]).cwiseAbs().maxCoeff());

    rep.iterations = t;
    rep.final_param_change = dp;
    if (t > 1 && std::abs(e - prev_elbo) < opts.tol_elbo) {
      rep.converged_by = StopReason::elbo_tol;
      break;
    }
    if (dp < opts.tol_param) {
      rep.converged_by = StopReason::param_tol;
      break;
    }
    prev_elbo = e;
  }
  rep.state = std::move(st);
  return rep;
}

}  // namespace pgvi
