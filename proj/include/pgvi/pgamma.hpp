#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "pgvi/common.hpp"

namespace pgvi {

inline constexpr double pi = 3.14159265358979323846;

// E[omega] for omega ~ PG(b, c): b/(2c) tanh(c/2), even in c. A short series
// takes over below |c| = 1e-6 and at the c = 0 limit b/4.
inline double pg_mean(double b, double c) {
  if (b == 0.0) return 0.0;
  const double a = std::abs(c);
  if (a < 1e-6) return 0.25 * b * (1.0 - a * a / 12.0);
  return b / (2.0 * a) * std::tanh(0.5 * a);
}

// Tilted-observation pair (b_i, c_i) for every row.
struct PGParams {
  Eigen::VectorXd b;
  Eigen::VectorXd c;
};

// Net contribution of the tilted PG blocks to the objective:
//   sum_i [ b_i c_i / 4 * tanh(c_i / 2) - b_i * ln cosh(c_i / 2) ]
// (the intractable ln f_PG(omega | b, 0) expectations cancel in the bound).
inline double pg_elbo_terms(const Eigen::VectorXd& b, const Eigen::VectorXd& c) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const double a = std::abs(c(i));
    acc += b(i) * (0.25 * a * std::tanh(0.5 * a) - log_cosh(0.5 * a));
  }
  return acc;
}

inline double pg_elbo_terms(const PGParams& pg) { return pg_elbo_terms(pg.b, pg.c); }

namespace detail {

inline constexpr int pg_series_terms = 200;

struct PgSeriesTables {
  Eigen::Array<double, pg_series_terms, 1> k_half_sq;  // (k - 1/2)^2
  PgSeriesTables() {
    for (int k = 0; k < pg_series_terms; ++k)
      k_half_sq(k) = (k + 0.5) * (k + 0.5);
  }
};

inline const PgSeriesTables& pg_tables() {
  static const PgSeriesTables t;
  return t;
}

// Uniform in (0, 1), never exactly 0 or 1.
inline double unit_open(Rng& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1p-53;
}

}  // namespace detail

// Total series weight sum_{k>=1} 1/((k-1/2)^2 + a^2) = pi/(2a) tanh(pi a).
inline double pg_series_total(double a) {
  if (a < 1e-8) return 0.5 * pi * pi * (1.0 - pi * pi * a * a / 3.0);
  return 0.5 * pi / a * std::tanh(pi * a);
}

// Draws omega ~ PG(b, c) for integer b >= 1 by the weighted Gamma series
//   omega = (1/(2 pi^2)) sum_k Z_k / ((k - 1/2)^2 + c^2/(4 pi^2)),  Z_k ~ Gamma(b, 1),
// truncated at 200 terms with the truncated tail replaced by its mean.
inline double pg_sample(int b, double c, Rng& rng) {
  if (b <= 0) return 0.0;
  const auto& qk = detail::pg_tables().k_half_sq;
  const double a = std::abs(c) / (2.0 * pi);
  const Eigen::Array<double, detail::pg_series_terms, 1> denom = qk + a * a;

  Eigen::Array<double, detail::pg_series_terms, 1> gam;
  Eigen::Array<double, detail::pg_series_terms, 1> u;
  for (int r = 0; r < b; ++r) {
    for (int k = 0; k < detail::pg_series_terms; ++k) u(k) = detail::unit_open(rng);
    if (r == 0)
      gam = -u.log();
    else
      gam -= u.log();
  }

  const double head = (gam / denom).sum();
  const double tail_weight = pg_series_total(a) - denom.inverse().sum();
  return (head + b * tail_weight) / (2.0 * pi * pi);
}

}  // namespace pgvi
