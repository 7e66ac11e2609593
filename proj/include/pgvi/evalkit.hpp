#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pgvi/cavi.hpp"
#include "pgvi/design.hpp"
#include "pgvi/draws.hpp"
#include "pgvi/pgamma.hpp"
#include "pgvi/prior.hpp"

namespace pgvi {

// Rule-of-thumb kernel bandwidth. Falls back to the sample sd when the IQR
// is degenerate; returns 0 only when the sample itself is constant.
inline double silverman_bw(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  if (n < 2) throw DataError("bandwidth needs at least two points");
  const double mean = x.mean();
  const double sd = std::sqrt((x.array() - mean).square().sum() / (n - 1));
  std::vector<double> v(x.data(), x.data() + n);
  std::sort(v.begin(), v.end());
  auto quant = [&](double p) {
    const double idx = p * (n - 1);
    const auto lo = static_cast<Eigen::Index>(std::floor(idx));
    const auto hi = std::min<Eigen::Index>(lo + 1, n - 1);
    const double frac = idx - static_cast<double>(lo);
    return (1.0 - frac) * v[static_cast<std::size_t>(lo)] + frac * v[static_cast<std::size_t>(hi)];
  };
  const double iqr = quant(0.75) - quant(0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

namespace detail {

// Linear-binned counts of x over the grid [lo, lo + (bins-1) dx], divided by
// the sample size so they sum to one.
inline Eigen::VectorXd bin_weights(const Eigen::VectorXd& x, double lo, double dx, int bins) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(bins);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double pos = (x(i) - lo) / dx;
    pos = std::min(std::max(pos, 0.0), static_cast<double>(bins - 1));
    const int b0 = std::min(static_cast<int>(pos), bins - 2);
    const double frac = pos - b0;
    w(b0) += 1.0 - frac;
    w(b0 + 1) += frac;
  }
  return w / static_cast<double>(x.size());
}

}  // namespace detail

// Distributional overlap of two samples of the same scalar quantity:
// 1 - (1/2) integral |f_a - f_b|, with both densities estimated on one grid
// using one shared bandwidth so identical samples score exactly one. The
// densities use linear binning, so the cost is in the grid, not the draws.
inline double accuracy(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  constexpr int grid = 512;
  double h = 0.5 * (silverman_bw(a) + silverman_bw(b));
  const double amax = std::max(a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff());
  h = std::max(h, 1e-12 * (1.0 + amax));  // constant samples get a spike width
  const double lo = std::min(a.minCoeff(), b.minCoeff()) - 3.0 * h;
  const double hi = std::max(a.maxCoeff(), b.maxCoeff()) + 3.0 * h;
  const double dx = (hi - lo) / (grid - 1);

  const Eigen::VectorXd wa = detail::bin_weights(a, lo, dx, grid);
  const Eigen::VectorXd wb = detail::bin_weights(b, lo, dx, grid);

  // kernel values at multiples of the grid step, shared by both densities
  Eigen::VectorXd kern(grid);
  const double norm = 1.0 / (h * std::sqrt(2.0 * pi));
  for (int k = 0; k < grid; ++k) {
    const double u = k * dx / h;
    kern(k) = u > 38.0 ? 0.0 : norm * std::exp(-0.5 * u * u);
  }
  Eigen::VectorXd diff(grid);
  for (int g = 0; g < grid; ++g) {
    double fa = 0.0, fb = 0.0;
    for (int b0 = 0; b0 < grid; ++b0) {
      const double k = kern(std::abs(g - b0));
      fa += wa(b0) * k;
      fb += wb(b0) * k;
    }
    diff(g) = std::abs(fa - fb);
  }
  double integral = 0.0;
  for (int g = 0; g + 1 < grid; ++g) integral += 0.5 * (diff(g) + diff(g + 1)) * dx;
  return std::min(1.0, std::max(0.0, 1.0 - 0.5 * integral));
}

inline Eigen::VectorXd accuracy_columns(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw DataError("draw matrices have different column counts");
  Eigen::VectorXd out(a.cols());
  for (Eigen::Index c = 0; c < a.cols(); ++c) out(c) = accuracy(a.col(c), b.col(c));
  return out;
}

// Per-coefficient overlap of two draw sets for the same model, with fixed /
// random / per-effect aggregates.
struct AccuracyReport {
  Eigen::VectorXd beta;   // one entry per fixed coefficient
  Eigen::VectorXd alpha;  // one entry per random coefficient
  double fixed_mean = 0.0;
  double random_mean = 0.0;
  std::vector<double> effect_mean;  // per random effect

  double overall_mean() const {
    const double tot = beta.sum() + alpha.sum();
    return tot / static_cast<double>(beta.size() + alpha.size());
  }
};

inline AccuracyReport accuracy_report(const ModelMeta& meta, const PosteriorDraws& ref,
                                      const PosteriorDraws& cand) {
  AccuracyReport r;
  r.beta = accuracy_columns(ref.beta, cand.beta);
  r.alpha = accuracy_columns(ref.alpha, cand.alpha);
  r.fixed_mean = r.beta.size() ? r.beta.mean() : 0.0;
  r.random_mean = r.alpha.size() ? r.alpha.mean() : 0.0;
  for (const auto& e : meta.effects) {
    const int w = e.d * e.g;
    r.effect_mean.push_back(w ? r.alpha.segment(e.col_offset, w).mean() : 0.0);
  }
  return r;
}

// Fraction of coefficients whose true value lies inside the central 95%
// normal interval implied by the draw mean and sd.
inline double coverage(const Eigen::MatrixXd& draws, const Eigen::VectorXd& truth) {
  if (draws.cols() != truth.size()) throw DataError("coverage: column count mismatch");
  if (draws.rows() < 2) throw DataError("coverage needs at least two draws");
  Eigen::Index hit = 0;
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    const double m = draws.col(c).mean();
    const double sd =
        std::sqrt((draws.col(c).array() - m).square().sum() / (draws.rows() - 1));
    if (std::abs(truth(c) - m) <= 1.96 * sd) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(draws.cols());
}

struct BiasRmse {
  double bias = 0.0;
  double rmse = 0.0;
};

inline BiasRmse bias_rmse(const Eigen::VectorXd& est, const Eigen::VectorXd& truth) {
  if (est.size() != truth.size()) throw DataError("bias/rmse: size mismatch");
  BiasRmse r;
  r.bias = (est - truth).mean();
  r.rmse = std::sqrt((est - truth).array().square().mean());
  return r;
}

// Mean binomial deviance -2 [y ln p + (n-y) ln(1-p)] over rows with trials.
// A fitted probability of exactly 0 or 1 against a disagreeing outcome makes
// the mean infinite; those rows are counted so callers can flag them.
struct DevianceResult {
  double value = 0.0;
  Eigen::Index rows = 0;
  Eigen::Index degenerate = 0;
};

inline DevianceResult binomial_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& n,
                                        const Eigen::VectorXd& phat) {
  if (y.size() != n.size() || y.size() != phat.size())
    throw DataError("deviance: size mismatch");
  DevianceResult r;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (n(i) <= 0) continue;
    ++r.rows;
    const double p = phat(i);
    double t = 0.0;
    if (y(i) > 0) {
      if (p <= 0.0) {
        ++r.degenerate;
        t = std::numeric_limits<double>::infinity();
      } else {
        t += y(i) * std::log(p);
      }
    }
    if (n(i) - y(i) > 0 && t != std::numeric_limits<double>::infinity()) {
      if (p >= 1.0) {
        ++r.degenerate;
        t = std::numeric_limits<double>::infinity();
      } else {
        t += (n(i) - y(i)) * std::log1p(-p);
      }
    }
    acc += (t == std::numeric_limits<double>::infinity())
               ? std::numeric_limits<double>::infinity()
               : -2.0 * t;
  }
  if (r.rows == 0) throw DataError("deviance: no rows with positive trials");
  r.value = acc / static_cast<double>(r.rows);
  return r;
}

// ---- K-fold cross validation on held-out deviance ----

struct CvOptions {
  int folds = 10;
  std::uint64_t seed = 0;
};

struct CvFoldResult {
  double deviance = 0.0;
  Eigen::Index rows = 0;
};

struct CvResult {
  double pooled_deviance = 0.0;  // mean over all held-out rows
  std::vector<CvFoldResult> folds;
  Eigen::Index degenerate = 0;
  std::vector<std::string> warnings;
};

// Rows are assigned to folds uniformly at random from the seed; each fold is
// held out once, the model is refit on the rest (with that split's unused
// group levels pruned), and held-out rows are scored by the plug-in mean
// predictor. A held-out level never seen in training contributes zero, its
// prior mean.
inline CvResult kfold_cv(const DesignSet& d, const PriorSpec& prior, const FitOptions& fit_opts,
                         const CvOptions& cv) {
  const Eigen::Index N = d.N();
  if (cv.folds < 2) throw DataError("cross validation needs at least two folds");
  if (N < cv.folds) throw DataError("fewer rows than folds");

  Rng rng = make_rng(cv.seed, 0xCF01);
  std::uniform_int_distribution<int> pick(0, cv.folds - 1);
  std::vector<int> fold(static_cast<std::size_t>(N));
  for (auto& f : fold) f = pick(rng);
  for (int k = 0; k < cv.folds; ++k)
    if (std::count(fold.begin(), fold.end(), k) == 0)
      throw DataError("cross-validation fold " + std::to_string(k + 1) +
                      " is empty; use fewer folds or another seed");

  CvResult out;
  double pooled = 0.0;
  Eigen::Index pooled_rows = 0;
  for (int k = 0; k < cv.folds; ++k) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < N; ++i)
      (fold[static_cast<std::size_t>(i)] == k ? test : train).push_back(i);

    const SubsetDesign sub = subset_design(d, train);
    const FitReport rep = fit(sub.design, prior, fit_opts);
    if (rep.converged_by == StopReason::max_iter)
      out.warnings.push_back("fold " + std::to_string(k + 1) + " hit the iteration cap");

    Eigen::VectorXd yk(static_cast<Eigen::Index>(test.size()));
    Eigen::VectorXd nk(yk.size()), ph(yk.size());
    for (Eigen::Index t = 0; t < yk.size(); ++t) {
      const Eigen::Index i = test[static_cast<std::size_t>(t)];
      yk(t) = d.y(i);
      nk(t) = d.n(i);
      double psi = d.X.row(i) * rep.state.mu_beta;
      for (int j = 0; j < d.n_effects(); ++j) {
        const auto& se = sub.design.meta.effects[static_cast<std::size_t>(j)];
        const int lev = sub.parent_to_sub[static_cast<std::size_t>(j)]
                                         [static_cast<std::size_t>(
                                             d.group[static_cast<std::size_t>(j)](i))];
        if (lev < 0) continue;  // unseen in training: prior mean is zero
        psi += d.zb[static_cast<std::size_t>(j)].row(i) *
               rep.state.mu_alpha.segment(se.col_offset + lev * se.d, se.d);
      }
      ph(t) = logistic(psi);
    }
    const DevianceResult dev = binomial_deviance(yk, nk, ph);
    out.folds.push_back({dev.value, dev.rows});
    out.degenerate += dev.degenerate;
    pooled += dev.value * static_cast<double>(dev.rows);
    pooled_rows += dev.rows;
  }
  out.pooled_deviance = pooled / static_cast<double>(pooled_rows);
  if (out.degenerate > 0)
    out.warnings.push_back(std::to_string(out.degenerate) +
                           " held-out rows hit a degenerate fitted probability");
  return out;
}

}  // namespace pgvi
