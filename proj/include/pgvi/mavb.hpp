#pragma once

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "pgvi/distributions.hpp"
#include "pgvi/draws.hpp"
#include "pgvi/state.hpp"

namespace pgvi {

namespace detail {

inline constexpr std::size_t draw_chunk = 256;

// Adds M_j mu into the fixed-effect part of one draw.
inline void scatter_fixed(const EffectMeta& e, const Eigen::VectorXd& mu,
                          Eigen::MatrixXd& beta, Eigen::Index row, double sign) {
  for (int k = 0; k < e.d; ++k)
    beta(row, e.fixed_index[static_cast<std::size_t>(k)]) += sign * mu(k);
}

}  // namespace detail

// Samples M joint draws from the fitted factorization (Gaussian block(s)
// plus per-effect inverse-Wishart scales). Draws are generated in fixed
// 256-draw chunks with per-chunk RNG streams, so the result depends only on
// the seed, never on the thread count.
inline PosteriorDraws sample_q(const ModelMeta& meta, const VariationalState& st,
                               Eigen::Index M, std::uint64_t seed, unsigned threads = 1) {
  const int p = st.p(), q = st.q();
  PosteriorDraws out;
  out.source = "raw_q";
  out.seed = seed;
  out.beta.resize(M, p);
  out.alpha.resize(M, q);
  for (const auto& e : meta.effects)
    out.sigma.push_back(Eigen::MatrixXd(M, e.d * e.d));

  // Pre-factor every Gaussian block once.
  Eigen::MatrixXd Lbeta, Lalpha, Ljoint;
  std::vector<std::vector<Eigen::MatrixXd>> Lblocks;
  switch (st.scheme) {
    case Scheme::I: {
      Lbeta = cholesky_lower(st.cov_beta, "fixed-effect covariance");
      Lblocks.resize(st.cov_alpha.size());
      for (std::size_t j = 0; j < st.cov_alpha.size(); ++j)
        for (const auto& B : st.cov_alpha[j])
          Lblocks[j].push_back(cholesky_lower(B, "group covariance block"));
      break;
    }
    case Scheme::II:
      Lbeta = cholesky_lower(st.cov_beta, "fixed-effect covariance");
      if (q > 0) Lalpha = cholesky_lower(st.cov_alpha_joint, "random-effect covariance");
      break;
    default:
      Ljoint = cholesky_lower(st.cov_joint, "joint covariance");
      break;
  }
  std::vector<Eigen::MatrixXd> Lphi;
  for (const auto& b : st.iw)
    Lphi.push_back(cholesky_lower(b.Phi, "variational scale"));

  parallel_chunks(static_cast<std::size_t>(M), detail::draw_chunk, threads,
                  [&](std::size_t chunk, std::size_t lo, std::size_t hi) {
    Rng rng = make_rng(seed, chunk);
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd z(p + q);
    for (std::size_t m = lo; m < hi; ++m) {
      const auto row = static_cast<Eigen::Index>(m);
      switch (st.scheme) {
        case Scheme::I: {
          for (int a = 0; a < p; ++a) z(a) = nd(rng);
          out.beta.row(row) = (st.mu_beta + Lbeta * z.head(p)).transpose();
          for (int j = 0; j < meta.n_effects(); ++j) {
            const auto& e = meta.effects[static_cast<std::size_t>(j)];
            for (int g = 0; g < e.g; ++g) {
              for (int k = 0; k < e.d; ++k) z(k) = nd(rng);
              out.alpha.row(row).segment(e.col_offset + g * e.d, e.d) =
                  (st.mu_alpha.segment(e.col_offset + g * e.d, e.d) +
                   Lblocks[static_cast<std::size_t>(j)][static_cast<std::size_t>(g)] *
                       z.head(e.d))
                      .transpose();
            }
          }
          break;
        }
        case Scheme::II: {
          for (int a = 0; a < p; ++a) z(a) = nd(rng);
          out.beta.row(row) = (st.mu_beta + Lbeta * z.head(p)).transpose();
          if (q > 0) {
            for (int a = 0; a < q; ++a) z(a) = nd(rng);
            out.alpha.row(row) = (st.mu_alpha + Lalpha * z.head(q)).transpose();
          }
          break;
        }
        default: {
          for (int a = 0; a < p + q; ++a) z(a) = nd(rng);
          Eigen::VectorXd theta(p + q);
          theta << st.mu_beta, st.mu_alpha;
          theta += Ljoint * z;
          out.beta.row(row) = theta.head(p).transpose();
          out.alpha.row(row) = theta.tail(q).transpose();
          break;
        }
      }
      for (int j = 0; j < meta.n_effects(); ++j) {
        const auto& e = meta.effects[static_cast<std::size_t>(j)];
        const Eigen::MatrixXd S = sample_iw_chol(
            st.iw[static_cast<std::size_t>(j)].nu, Lphi[static_cast<std::size_t>(j)], rng);
        for (int r = 0; r < e.d; ++r)
          for (int c = 0; c < e.d; ++c)
            out.sigma[static_cast<std::size_t>(j)](row, r * e.d + c) = S(r, c);
      }
    }
  });
  return out;
}

// Improper-working-prior expansion: every draw is recentered by a sampled
// group-mean shift mu_j ~ N(mean_g alpha_jg, Sigma_j / g_j); the shift moves
// into the fixed effects so the linear predictor is untouched.
inline PosteriorDraws mavb_improper(const ModelMeta& meta, const PosteriorDraws& in,
                                    std::uint64_t seed, unsigned threads = 1) {
  PosteriorDraws out = in;
  out.source = "mavb_improper";
  out.seed = seed;
  out.tau2 = std::numeric_limits<double>::quiet_NaN();
  parallel_chunks(static_cast<std::size_t>(in.M()), detail::draw_chunk, threads,
                  [&](std::size_t chunk, std::size_t lo, std::size_t hi) {
    Rng rng = make_rng(seed, chunk);
    for (std::size_t m = lo; m < hi; ++m) {
      const auto row = static_cast<Eigen::Index>(m);
      for (int j = 0; j < meta.n_effects(); ++j) {
        const auto& e = meta.effects[static_cast<std::size_t>(j)];
        if (e.g == 0) continue;
        const Eigen::MatrixXd S = out.sigma_draw(j, row);
        Eigen::VectorXd abar = Eigen::VectorXd::Zero(e.d);
        for (int g = 0; g < e.g; ++g)
          abar += out.alpha.row(row).segment(e.col_offset + g * e.d, e.d).transpose();
        abar /= static_cast<double>(e.g);
        const Eigen::MatrixXd L =
            cholesky_lower(S / static_cast<double>(e.g), "expansion covariance");
        const Eigen::VectorXd mu = sample_mvn_chol(abar, L, rng);
        for (int g = 0; g < e.g; ++g)
          out.alpha.row(row).segment(e.col_offset + g * e.d, e.d) -= mu.transpose();
        detail::scatter_fixed(e, mu, out.beta, row, +1.0);
      }
    }
  });
  return out;
}

// Proper-working-prior expansion with variance tau2: the model is expanded
// by mu_j ~ N(0, tau2 I), the expansion parameter is re-sampled from its
// conditional, and the draw is re-reduced. tau2 -> 0 leaves draws unchanged;
// tau2 -> infinity recovers the improper variant.
inline PosteriorDraws mavb_proper(const ModelMeta& meta, const PosteriorDraws& in, double tau2,
                                  std::uint64_t seed, unsigned threads = 1) {
  if (!(tau2 > 0)) throw DataError("working-prior variance must be positive");
  PosteriorDraws out = in;
  out.source = "mavb_proper";
  out.seed = seed;
  out.tau2 = tau2;
  parallel_chunks(static_cast<std::size_t>(in.M()), detail::draw_chunk, threads,
                  [&](std::size_t chunk, std::size_t lo, std::size_t hi) {
    Rng rng = make_rng(seed, chunk);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (std::size_t m = lo; m < hi; ++m) {
      const auto row = static_cast<Eigen::Index>(m);
      for (int j = 0; j < meta.n_effects(); ++j) {
        const auto& e = meta.effects[static_cast<std::size_t>(j)];
        if (e.g == 0) continue;
        const Eigen::MatrixXd S = out.sigma_draw(j, row);

        // expand: alpha_jg + mu0, beta - M_j mu0
        Eigen::VectorXd mu0(e.d);
        for (int k = 0; k < e.d; ++k) mu0(k) = std::sqrt(tau2) * nd(rng);
        for (int g = 0; g < e.g; ++g)
          out.alpha.row(row).segment(e.col_offset + g * e.d, e.d) += mu0.transpose();
        detail::scatter_fixed(e, mu0, out.beta, row, -1.0);

        // re-sample the expansion parameter from its conditional
        Eigen::LLT<Eigen::MatrixXd> Sllt(S);
        if (Sllt.info() != Eigen::Success)
          throw NumericalError("covariance draw is not positive definite");
        const Eigen::MatrixXd Sinv = Sllt.solve(Eigen::MatrixXd::Identity(e.d, e.d));
        Eigen::MatrixXd P = static_cast<double>(e.g) * Sinv;
        P.diagonal().array() += 1.0 / tau2;
        Eigen::LLT<Eigen::MatrixXd> Pllt(P);
        if (Pllt.info() != Eigen::Success)
          throw NumericalError("expansion precision is not positive definite");
        Eigen::VectorXd asum = Eigen::VectorXd::Zero(e.d);
        for (int g = 0; g < e.g; ++g)
          asum += out.alpha.row(row).segment(e.col_offset + g * e.d, e.d).transpose();
        const Eigen::VectorXd mean = Pllt.solve(Sinv * asum);
        Eigen::VectorXd z(e.d);
        for (int k = 0; k < e.d; ++k) z(k) = nd(rng);
        const Eigen::VectorXd mu = mean + Pllt.matrixU().solve(z);

        // reduce
        for (int g = 0; g < e.g; ++g)
          out.alpha.row(row).segment(e.col_offset + g * e.d, e.d) -= mu.transpose();
        detail::scatter_fixed(e, mu, out.beta, row, +1.0);
      }
    }
  });
  return out;
}

}  // namespace pgvi
