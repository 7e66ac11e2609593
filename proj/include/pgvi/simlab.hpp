#pragma once

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pgvi/common.hpp"
#include "pgvi/design.hpp"
#include "pgvi/distributions.hpp"
#include "pgvi/table.hpp"

namespace pgvi {

// Crossed-design generator: p correlated covariates with AR(1) correlation
// rho, slopes drawn N(0, sigma_beta^2), one random intercept per grouping
// factor with effects N(0, sigma_alpha^2), rows assigned to groups uniformly.
// Optional spurious grouping columns are written to the table but contribute
// nothing to the linear predictor.
struct SimConfig {
  Eigen::Index N = 1000;
  int p = 10;
  std::vector<int> groups = {10, 10};
  std::vector<int> spurious_groups = {};
  double sigma_beta = 0.2;
  double sigma_alpha = 1.0;
  double rho = 0.5;
  int trials = 1;
};

struct SimData {
  Table table;          // columns: y, n, x1..xp, g1.., s1..
  std::string formula;  // fitted form: intercept + all x + one term per real effect
  Eigen::VectorXd beta;    // truth for the fitted fixed effects (leading 0 intercept)
  Eigen::VectorXd alpha;   // truth, stacked to match the built design
  Eigen::VectorXd psi;     // per-row linear predictor
};

namespace detail {

inline std::string padded_label(int idx, int total) {
  std::string s = std::to_string(idx + 1);
  std::size_t width = std::to_string(total).size();
  while (s.size() < width) s.insert(s.begin(), '0');
  return s;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

inline SimData simulate_crossed(const SimConfig& cfg, std::uint64_t seed) {
  if (cfg.N < 1 || cfg.p < 1 || cfg.trials < 1) throw DataError("bad simulation size");
  for (int g : cfg.groups)
    if (g < 1) throw DataError("each effect needs at least one group");
  Rng rng = make_rng(seed, 0x51);
  std::normal_distribution<double> nd(0.0, 1.0);

  Eigen::VectorXd beta(cfg.p);
  for (int k = 0; k < cfg.p; ++k) beta(k) = cfg.sigma_beta * nd(rng);

  const auto J = static_cast<int>(cfg.groups.size());
  std::vector<Eigen::VectorXd> alpha(static_cast<std::size_t>(J));
  for (int j = 0; j < J; ++j) {
    alpha[static_cast<std::size_t>(j)].resize(cfg.groups[static_cast<std::size_t>(j)]);
    for (int g = 0; g < cfg.groups[static_cast<std::size_t>(j)]; ++g)
      alpha[static_cast<std::size_t>(j)](g) = cfg.sigma_alpha * nd(rng);
  }

  // AR(1) covariate correlation
  Eigen::MatrixXd corr(cfg.p, cfg.p);
  for (int a = 0; a < cfg.p; ++a)
    for (int b = 0; b < cfg.p; ++b) corr(a, b) = std::pow(cfg.rho, std::abs(a - b));
  const Eigen::MatrixXd L = cholesky_lower(corr, "covariate correlation");

  SimData out;
  Table& t = out.table;
  t.names = {"y", "n"};
  for (int k = 0; k < cfg.p; ++k) t.names.push_back("x" + std::to_string(k + 1));
  for (int j = 0; j < J; ++j) t.names.push_back("g" + std::to_string(j + 1));
  for (std::size_t j = 0; j < cfg.spurious_groups.size(); ++j)
    t.names.push_back("s" + std::to_string(j + 1));
  t.cols.assign(t.names.size(), {});
  for (auto& c : t.cols) c.reserve(static_cast<std::size_t>(cfg.N));

  out.psi.resize(cfg.N);
  for (Eigen::Index i = 0; i < cfg.N; ++i) {
    const Eigen::VectorXd x = L * std_normal_vector(cfg.p, rng);
    double psi = x.dot(beta);
    std::vector<int> gidx(static_cast<std::size_t>(J));
    for (int j = 0; j < J; ++j) {
      std::uniform_int_distribution<int> pick(0, cfg.groups[static_cast<std::size_t>(j)] - 1);
      gidx[static_cast<std::size_t>(j)] = pick(rng);
      psi += alpha[static_cast<std::size_t>(j)](gidx[static_cast<std::size_t>(j)]);
    }
    out.psi(i) = psi;
    std::binomial_distribution<int> bin(cfg.trials, logistic(psi));
    const int y = bin(rng);
    t.cols[0].push_back(std::to_string(y));
    t.cols[1].push_back(std::to_string(cfg.trials));
    for (int k = 0; k < cfg.p; ++k)
      t.cols[static_cast<std::size_t>(2 + k)].push_back(detail::format_double(x(k)));
    for (int j = 0; j < J; ++j)
      t.cols[static_cast<std::size_t>(2 + cfg.p + j)].push_back(
          detail::padded_label(gidx[static_cast<std::size_t>(j)],
                               cfg.groups[static_cast<std::size_t>(j)]));
    for (std::size_t sj = 0; sj < cfg.spurious_groups.size(); ++sj) {
      std::uniform_int_distribution<int> pick(0, cfg.spurious_groups[sj] - 1);
      t.cols[static_cast<std::size_t>(2 + cfg.p + J) + sj].push_back(
          detail::padded_label(pick(rng), cfg.spurious_groups[sj]));
    }
  }

  std::string f = "y/n ~ 1";
  for (int k = 0; k < cfg.p; ++k) f += " + x" + std::to_string(k + 1);
  for (int j = 0; j < J; ++j) f += " + (1|g" + std::to_string(j + 1) + ")";
  out.formula = f;

  out.beta.resize(cfg.p + 1);
  out.beta(0) = 0.0;  // the fitted intercept; generation has none
  out.beta.tail(cfg.p) = beta;

  // group labels are zero padded, so lexicographic level order matches
  // generation order and the truth can be stacked directly
  Eigen::Index q = 0;
  for (int j = 0; j < J; ++j) q += cfg.groups[static_cast<std::size_t>(j)];
  out.alpha.resize(q);
  Eigen::Index at = 0;
  for (int j = 0; j < J; ++j) {
    out.alpha.segment(at, cfg.groups[static_cast<std::size_t>(j)]) =
        alpha[static_cast<std::size_t>(j)];
    at += cfg.groups[static_cast<std::size_t>(j)];
  }
  return out;
}

// Redraw the response of an existing design at given coefficients; used for
// parametric refreshes of real datasets.
inline Eigen::VectorXd simulate_response(const DesignSet& d, const Eigen::VectorXd& beta,
                                         const Eigen::VectorXd& alpha, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x5F);
  const Eigen::VectorXd psi = linear_predictor(d, beta, alpha);
  Eigen::VectorXd y(d.N());
  for (Eigen::Index i = 0; i < d.N(); ++i) {
    const double v = d.n(i);
    if (std::abs(v - std::round(v)) > 1e-9 || v < 0)
      throw DataError("response simulation needs integer trial counts");
    std::binomial_distribution<int> bin(static_cast<int>(std::round(v)), logistic(psi(i)));
    y(i) = bin(rng);
  }
  return y;
}

}  // namespace pgvi
