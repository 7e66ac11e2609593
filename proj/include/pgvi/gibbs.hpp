#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "pgvi/cavi.hpp"
#include "pgvi/design.hpp"
#include "pgvi/distributions.hpp"
#include "pgvi/draws.hpp"
#include "pgvi/pgamma.hpp"
#include "pgvi/prior.hpp"

namespace pgvi {

struct GibbsOptions {
  Eigen::Index sweeps = 4000;  // retained draws after burn-in
  Eigen::Index burn_in = 2000;
  Eigen::Index thin = 1;
  bool recenter = true;  // group-mean re-centering move each sweep
  bool keep_omega = false;
  std::uint64_t seed = 0;
};

struct GibbsChain {
  PosteriorDraws draws;
  Eigen::MatrixXd omega;  // sweeps x N, only when keep_omega was set
};

// Data-augmented Gibbs sampler for the same model the variational engine
// fits: omega_i | psi ~ PG(n_i, psi_i), then (beta, alpha) jointly Gaussian
// given omega and the current Sigma_j, then Sigma_j inverse-Wishart given
// alpha. With recenter on, each sweep ends with a group-mean shift sampled
// under the current Sigma_j and moved between alpha and beta; the linear
// predictor is unchanged and mixing of the intercept-like directions
// improves markedly.
inline GibbsChain gibbs_run(const DesignSet& d, const PriorSpec& prior,
                            const GibbsOptions& opts) {
  const Eigen::Index N = d.N();
  const int p = d.p(), q = d.q(), J = d.n_effects();
  if (opts.sweeps < 1) throw DataError("sampler needs at least one retained sweep");
  if (opts.burn_in < 0 || opts.thin < 1) throw DataError("bad sampler schedule");
  prior.validate(d.meta);
  std::vector<int> ni(static_cast<std::size_t>(N));
  for (Eigen::Index i = 0; i < N; ++i) {
    const double v = d.n(i);
    if (std::abs(v - std::round(v)) > 1e-9 || v < 1)
      throw DataError("sampler requires integer trial counts of at least one");
    ni[static_cast<std::size_t>(i)] = static_cast<int>(std::round(v));
  }

  Rng rng = make_rng(opts.seed, 0x91BB);
  std::normal_distribution<double> nd(0.0, 1.0);

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p + q);
  std::vector<Eigen::MatrixXd> Sigma, Sinv;
  for (int j = 0; j < J; ++j) {
    const int dj = d.meta.effects[static_cast<std::size_t>(j)].d;
    Sigma.push_back(Eigen::MatrixXd::Identity(dj, dj));
    Sinv.push_back(Eigen::MatrixXd::Identity(dj, dj));
  }

  GibbsChain chain;
  PosteriorDraws& out = chain.draws;
  out.source = "gibbs";
  out.seed = opts.seed;
  out.beta.resize(opts.sweeps, p);
  out.alpha.resize(opts.sweeps, q);
  for (int j = 0; j < J; ++j) {
    const int dj = d.meta.effects[static_cast<std::size_t>(j)].d;
    out.sigma.push_back(Eigen::MatrixXd(opts.sweeps, dj * dj));
  }
  if (opts.keep_omega) chain.omega.resize(opts.sweeps, N);

  const Eigen::VectorXd lin = d.XZ.transpose() * d.s;  // fixed across sweeps
  Eigen::VectorXd omega(N), psi(N);
  const Eigen::Index total = opts.burn_in + opts.sweeps * opts.thin;
  Eigen::Index kept = 0;
  for (Eigen::Index sweep = 0; sweep < total; ++sweep) {
    psi = d.XZ * theta;
    for (Eigen::Index i = 0; i < N; ++i)
      omega(i) = pg_sample(ni[static_cast<std::size_t>(i)], psi(i), rng);

    // joint Gaussian draw for (beta, alpha) given omega and current Sigma
    Eigen::MatrixXd H = detail::joint_information(d, omega);
    for (int j = 0; j < J; ++j) {
      const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
      for (int g = 0; g < e.g; ++g)
        H.block(p + e.col_offset + g * e.d, p + e.col_offset + g * e.d, e.d, e.d) +=
            Sinv[static_cast<std::size_t>(j)];
    }
    Eigen::LLT<Eigen::MatrixXd> llt(H);
    if (llt.info() != Eigen::Success)
      throw NumericalError("sampler information matrix is not positive definite");
    Eigen::VectorXd z(p + q);
    for (Eigen::Index a = 0; a < p + q; ++a) z(a) = nd(rng);
    theta = llt.solve(lin) + llt.matrixU().solve(z);

    // Sigma_j | alpha
    for (int j = 0; j < J; ++j) {
      const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
      Eigen::MatrixXd scatter = prior.effects[static_cast<std::size_t>(j)].Phi;
      for (int g = 0; g < e.g; ++g) {
        const Eigen::VectorXd a = theta.segment(p + e.col_offset + g * e.d, e.d);
        scatter.noalias() += a * a.transpose();
      }
      Sigma[static_cast<std::size_t>(j)] = sample_iw(
          prior.effects[static_cast<std::size_t>(j)].nu + e.g, scatter, rng);
      Eigen::LLT<Eigen::MatrixXd> sllt(Sigma[static_cast<std::size_t>(j)]);
      if (sllt.info() != Eigen::Success)
        throw NumericalError("sampled scale matrix is not positive definite");
      Sinv[static_cast<std::size_t>(j)] =
          sllt.solve(Eigen::MatrixXd::Identity(e.d, e.d));
    }

    // group-mean shift: draw mu_j ~ N(mean_g alpha_jg, Sigma_j / g_j), move
    // it out of alpha and into the matched fixed effects
    if (opts.recenter) {
      for (int j = 0; j < J; ++j) {
        const auto& e = d.meta.effects[static_cast<std::size_t>(j)];
        if (e.g == 0) continue;
        Eigen::VectorXd abar = Eigen::VectorXd::Zero(e.d);
        for (int g = 0; g < e.g; ++g)
          abar += theta.segment(p + e.col_offset + g * e.d, e.d);
        abar /= static_cast<double>(e.g);
        const Eigen::MatrixXd L = cholesky_lower(
            Sigma[static_cast<std::size_t>(j)] / static_cast<double>(e.g),
            "re-centering covariance");
        const Eigen::VectorXd mu = sample_mvn_chol(abar, L, rng);
        for (int g = 0; g < e.g; ++g)
          theta.segment(p + e.col_offset + g * e.d, e.d) -= mu;
        for (int k = 0; k < e.d; ++k)
          theta(e.fixed_index[static_cast<std::size_t>(k)]) += mu(k);
      }
    }

    if (sweep >= opts.burn_in && (sweep - opts.burn_in) % opts.thin == 0) {
      out.beta.row(kept) = theta.head(p).transpose();
      out.alpha.row(kept) = theta.tail(q).transpose();
      for (int j = 0; j < J; ++j)
        out.set_sigma_draw(j, kept, Sigma[static_cast<std::size_t>(j)]);
      if (opts.keep_omega) chain.omega.row(kept) = omega.transpose();
      ++kept;
    }
  }
  return chain;
}

// Standard error of a chain mean by non-overlapping batch means.
inline double chain_se(const Eigen::VectorXd& x, int batches = 20) {
  const Eigen::Index M = x.size();
  if (batches < 2 || M < 2 * batches) throw DataError("chain too short for batch means");
  const Eigen::Index len = M / batches;
  Eigen::VectorXd bm(batches);
  for (int b = 0; b < batches; ++b) bm(b) = x.segment(b * len, len).mean();
  const double grand = bm.mean();
  const double var_bm = (bm.array() - grand).square().sum() / (batches - 1);
  return std::sqrt(var_bm / batches);
}

}  // namespace pgvi
