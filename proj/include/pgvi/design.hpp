#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "pgvi/formula.hpp"
#include "pgvi/table.hpp"

namespace pgvi {

// Metadata for one random effect: d covariates per group, g groups. Columns
// of the stacked coefficient vector are group-major: offset + level*d + k.
struct EffectMeta {
  std::string name;                      // label (grouping column, deduplicated)
  std::string group_column;              // grouping column in the data
  int d = 0;
  int g = 0;
  int col_offset = 0;                    // first column inside Z / alpha
  std::vector<std::string> covariates;   // inner design columns; "1" = intercept
  std::vector<int> fixed_index;          // matching position among fixed terms
  std::vector<std::string> levels;       // sorted lexicographically
};

struct ModelMeta {
  ModelFormula formula;
  std::vector<std::string> fixed_names;
  std::vector<EffectMeta> effects;
  int p = 0;
  int q = 0;

  int n_effects() const { return static_cast<int>(effects.size()); }

  // Draw/report column labels, in [beta; alpha] stacking order.
  std::vector<std::string> beta_names() const {
    std::vector<std::string> out;
    out.reserve(fixed_names.size());
    for (const auto& t : fixed_names) out.push_back("beta." + t);
    return out;
  }
  std::vector<std::string> alpha_names() const {
    std::vector<std::string> out;
    out.reserve(static_cast<std::size_t>(q));
    for (const auto& e : effects)
      for (int g = 0; g < e.g; ++g)
        for (int k = 0; k < e.d; ++k)
          out.push_back("alpha." + e.name + "." + e.levels[static_cast<std::size_t>(g)] + "." +
                        e.covariates[static_cast<std::size_t>(k)]);
    return out;
  }
  std::vector<std::string> sigma_names() const {
    std::vector<std::string> out;
    for (const auto& e : effects)
      for (int r = 0; r < e.d; ++r)
        for (int c = 0; c < e.d; ++c)
          out.push_back("Sigma." + e.name + "." + std::to_string(r + 1) + "." +
                        std::to_string(c + 1));
    return out;
  }
};

// A row with zero trials carries no likelihood information; such rows are
// kept aside so they can still be scored by a fitted model.
struct ZeroTrialRow {
  std::size_t source_row = 0;
  Eigen::VectorXd x;
  std::vector<std::string> group_labels;  // one per effect
};

struct BuildOptions {
  bool round_binomial = false;
};

// Fitting-ready arrays: dense X, sparse Z (and cached [X Z]), the shifted
// response s = y - n/2, and per-effect row structure for blockwise updates.
struct DesignSet {
  ModelMeta meta;
  Eigen::VectorXd y, n, s;
  Eigen::MatrixXd X;
  Eigen::SparseMatrix<double> Z;
  Eigen::SparseMatrix<double> XZ;
  std::vector<Eigen::VectorXi> group;  // per effect: level index per row
  std::vector<Eigen::MatrixXd> zb;     // per effect: N x d covariate values
  std::vector<ZeroTrialRow> zero_rows;
  std::vector<std::string> warnings;

  Eigen::Index N() const { return y.size(); }
  int p() const { return meta.p; }
  int q() const { return meta.q; }
  int n_effects() const { return meta.n_effects(); }
};

namespace detail {

inline bool near_integer(double v) { return std::abs(v - std::round(v)) <= 1e-9; }

inline void finalize_xz(DesignSet& d) {
  const Eigen::Index N = d.X.rows();
  const int p = d.meta.p;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(N) * static_cast<std::size_t>(p + 4));
  for (Eigen::Index i = 0; i < N; ++i)
    for (int a = 0; a < p; ++a)
      if (d.X(i, a) != 0.0) trips.emplace_back(i, a, d.X(i, a));
  for (int k = 0; k < d.Z.outerSize(); ++k)
    for (Eigen::SparseMatrix<double>::InnerIterator it(d.Z, k); it; ++it)
      trips.emplace_back(it.row(), p + it.col(), it.value());
  d.XZ.resize(N, p + d.meta.q);
  d.XZ.setFromTriplets(trips.begin(), trips.end());
  d.XZ.makeCompressed();
}

}  // namespace detail

// Assembles the design from a data table and a parsed formula. Rows with
// zero trials are dropped from the fitting arrays (with a warning) and kept
// in zero_rows; group levels are indexed in sorted order over fitted rows.
inline DesignSet build_design(const Table& table, const ModelFormula& f,
                              const BuildOptions& opts = {}) {
  validate_against_header(f, table.names);
  const std::size_t R = table.rows();
  if (R == 0) throw DataError("data table has no rows");

  DesignSet d;
  d.meta.formula = f;
  d.meta.fixed_names = f.fixed_terms;
  d.meta.p = static_cast<int>(f.fixed_terms.size());

  // Response and trials, with integrality policy.
  std::vector<double> y_raw(R), n_raw(R);
  const auto& ycol = table.col(f.response);
  for (std::size_t i = 0; i < R; ++i)
    y_raw[i] = parse_number(ycol[i], "response column '" + f.response + "'");
  if (f.trials.empty()) {
    std::fill(n_raw.begin(), n_raw.end(), 1.0);
  } else {
    const auto& ncol = table.col(f.trials);
    for (std::size_t i = 0; i < R; ++i)
      n_raw[i] = parse_number(ncol[i], "trials column '" + f.trials + "'");
  }
  bool rounded = false;
  for (std::size_t i = 0; i < R; ++i) {
    if (!detail::near_integer(y_raw[i]) || !detail::near_integer(n_raw[i])) {
      if (!opts.round_binomial)
        throw DataError("non-integer successes/trials at data row " + std::to_string(i + 1) +
                        " (y=" + std::to_string(y_raw[i]) + ", n=" + std::to_string(n_raw[i]) +
                        "); pass round_binomial to round");
      rounded = true;
    }
    y_raw[i] = std::round(y_raw[i]);
    n_raw[i] = std::round(n_raw[i]);
    if (n_raw[i] < 0) throw DataError("negative trial count at data row " + std::to_string(i + 1));
    if (y_raw[i] < 0 || y_raw[i] > n_raw[i])
      throw DataError("successes outside [0, trials] at data row " + std::to_string(i + 1));
  }
  if (rounded) d.warnings.push_back("non-integer successes/trials were rounded to nearest integers");

  // Partition rows into fitted (n > 0) and zero-trial side rows.
  std::vector<std::size_t> keep;
  keep.reserve(R);
  std::vector<std::size_t> zeros;
  for (std::size_t i = 0; i < R; ++i)
    (n_raw[i] > 0 ? keep : zeros).push_back(i);
  if (!zeros.empty())
    d.warnings.push_back(std::to_string(zeros.size()) +
                         " rows with zero trials were excluded from fitting");
  if (keep.empty()) throw DataError("no rows with positive trial counts");
  const Eigen::Index N = static_cast<Eigen::Index>(keep.size());

  // Fixed-effect matrix.
  d.X.resize(N, d.meta.p);
  std::vector<const std::vector<std::string>*> fixed_cols(f.fixed_terms.size(), nullptr);
  for (std::size_t a = 0; a < f.fixed_terms.size(); ++a)
    if (f.fixed_terms[a] != "1") fixed_cols[a] = &table.col(f.fixed_terms[a]);
  for (Eigen::Index i = 0; i < N; ++i) {
    const std::size_t r = keep[static_cast<std::size_t>(i)];
    for (std::size_t a = 0; a < f.fixed_terms.size(); ++a)
      d.X(i, static_cast<int>(a)) =
          fixed_cols[a] ? parse_number((*fixed_cols[a])[r], "column '" + f.fixed_terms[a] + "'")
                        : 1.0;
  }

  d.y.resize(N);
  d.n.resize(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    d.y(i) = y_raw[keep[static_cast<std::size_t>(i)]];
    d.n(i) = n_raw[keep[static_cast<std::size_t>(i)]];
  }
  d.s = d.y - 0.5 * d.n;

  // Random effects: levels indexed lexicographically over fitted rows.
  std::vector<std::string> effect_names;
  int offset = 0;
  for (const auto& re : f.re_terms) {
    EffectMeta e;
    e.group_column = re.group;
    e.name = re.group;
    int dup = 1;
    while (std::find(effect_names.begin(), effect_names.end(), e.name) != effect_names.end())
      e.name = re.group + "." + std::to_string(++dup);
    effect_names.push_back(e.name);
    e.covariates = re.covariates;
    e.d = static_cast<int>(re.covariates.size());
    for (const auto& c : re.covariates) {
      const auto it = std::find(f.fixed_terms.begin(), f.fixed_terms.end(), c);
      e.fixed_index.push_back(static_cast<int>(it - f.fixed_terms.begin()));
    }

    const auto& gcol = table.col(re.group);
    std::map<std::string, int> index;  // ordered => lexicographic levels
    for (const auto r : keep) index.emplace(gcol[r], 0);
    e.g = static_cast<int>(index.size());
    e.levels.reserve(index.size());
    int next = 0;
    for (auto& kv : index) {
      kv.second = next++;
      e.levels.push_back(kv.first);
    }

    Eigen::VectorXi gidx(N);
    for (Eigen::Index i = 0; i < N; ++i)
      gidx(i) = index.at(gcol[keep[static_cast<std::size_t>(i)]]);
    d.group.push_back(std::move(gidx));

    Eigen::MatrixXd zb(N, e.d);
    for (int k = 0; k < e.d; ++k)
      zb.col(k) = d.X.col(e.fixed_index[static_cast<std::size_t>(k)]);
    d.zb.push_back(std::move(zb));

    e.col_offset = offset;
    offset += e.d * e.g;
    d.meta.effects.push_back(std::move(e));
  }
  d.meta.q = offset;

  // Reject duplicated (group, covariate) pairs, which would alias columns.
  for (std::size_t a = 0; a < d.meta.effects.size(); ++a)
    for (std::size_t b = a + 1; b < d.meta.effects.size(); ++b) {
      const auto& ea = d.meta.effects[a];
      const auto& eb = d.meta.effects[b];
      if (ea.group_column != eb.group_column) continue;
      for (const auto& c : ea.covariates)
        if (std::find(eb.covariates.begin(), eb.covariates.end(), c) != eb.covariates.end())
          throw DataError("covariate '" + c + "' appears twice for grouping factor '" +
                          ea.group_column + "'");
    }

  // Sparse random-effect design.
  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t j = 0; j < d.meta.effects.size(); ++j) {
    const auto& e = d.meta.effects[j];
    for (Eigen::Index i = 0; i < N; ++i) {
      const int base = e.col_offset + d.group[j](i) * e.d;
      for (int k = 0; k < e.d; ++k) {
        const double v = d.zb[j](i, k);
        if (v != 0.0) trips.emplace_back(i, base + k, v);
      }
    }
  }
  d.Z.resize(N, d.meta.q);
  d.Z.setFromTriplets(trips.begin(), trips.end());
  d.Z.makeCompressed();
  detail::finalize_xz(d);

  // Side table of zero-trial rows.
  for (const auto r : zeros) {
    ZeroTrialRow zr;
    zr.source_row = r;
    zr.x.resize(d.meta.p);
    for (std::size_t a = 0; a < f.fixed_terms.size(); ++a)
      zr.x(static_cast<int>(a)) =
          fixed_cols[a] ? parse_number((*fixed_cols[a])[r], "column '" + f.fixed_terms[a] + "'")
                        : 1.0;
    for (const auto& re : f.re_terms) zr.group_labels.push_back(table.col(re.group)[r]);
    d.zero_rows.push_back(std::move(zr));
  }
  return d;
}

inline Eigen::VectorXd linear_predictor(const DesignSet& d, const Eigen::VectorXd& beta,
                                        const Eigen::VectorXd& alpha) {
  if (beta.size() != d.p() || alpha.size() != d.q())
    throw DataError("coefficient sizes do not match design");
  return d.X * beta + d.Z * alpha;
}

// Row subset with unused group levels pruned (as when fitting on a CV
// training split). parent_to_sub maps parent level indices to subset level
// indices, -1 where the level does not occur in the subset.
struct SubsetDesign {
  DesignSet design;
  std::vector<std::vector<int>> parent_to_sub;
};

inline SubsetDesign subset_design(const DesignSet& parent, const std::vector<Eigen::Index>& rows) {
  if (rows.empty()) throw DataError("empty row subset");
  SubsetDesign out;
  DesignSet& d = out.design;
  const Eigen::Index N = static_cast<Eigen::Index>(rows.size());
  d.meta = parent.meta;
  d.y.resize(N);
  d.n.resize(N);
  d.X.resize(N, parent.p());
  for (Eigen::Index i = 0; i < N; ++i) {
    d.y(i) = parent.y(rows[static_cast<std::size_t>(i)]);
    d.n(i) = parent.n(rows[static_cast<std::size_t>(i)]);
    d.X.row(i) = parent.X.row(rows[static_cast<std::size_t>(i)]);
  }
  d.s = d.y - 0.5 * d.n;

  int offset = 0;
  for (int j = 0; j < parent.n_effects(); ++j) {
    const auto& pe = parent.meta.effects[static_cast<std::size_t>(j)];
    auto& e = d.meta.effects[static_cast<std::size_t>(j)];
    std::vector<char> used(static_cast<std::size_t>(pe.g), 0);
    for (Eigen::Index i = 0; i < N; ++i)
      used[static_cast<std::size_t>(
          parent.group[static_cast<std::size_t>(j)](rows[static_cast<std::size_t>(i)]))] = 1;
    std::vector<int> map(static_cast<std::size_t>(pe.g), -1);
    e.levels.clear();
    int next = 0;
    for (int l = 0; l < pe.g; ++l)
      if (used[static_cast<std::size_t>(l)]) {
        map[static_cast<std::size_t>(l)] = next++;
        e.levels.push_back(pe.levels[static_cast<std::size_t>(l)]);
      }
    e.g = next;
    e.col_offset = offset;
    offset += e.d * e.g;

    Eigen::VectorXi gidx(N);
    Eigen::MatrixXd zb(N, e.d);
    for (Eigen::Index i = 0; i < N; ++i) {
      const Eigen::Index r = rows[static_cast<std::size_t>(i)];
      gidx(i) = map[static_cast<std::size_t>(parent.group[static_cast<std::size_t>(j)](r))];
      zb.row(i) = parent.zb[static_cast<std::size_t>(j)].row(r);
    }
    d.group.push_back(std::move(gidx));
    d.zb.push_back(std::move(zb));
    out.parent_to_sub.push_back(std::move(map));
  }
  d.meta.q = offset;

  std::vector<Eigen::Triplet<double>> trips;
  for (std::size_t j = 0; j < d.meta.effects.size(); ++j) {
    const auto& e = d.meta.effects[j];
    for (Eigen::Index i = 0; i < N; ++i) {
      const int base = e.col_offset + d.group[j](i) * e.d;
      for (int k = 0; k < e.d; ++k)
        if (d.zb[j](i, k) != 0.0) trips.emplace_back(i, base + k, d.zb[j](i, k));
    }
  }
  d.Z.resize(N, d.meta.q);
  d.Z.setFromTriplets(trips.begin(), trips.end());
  d.Z.makeCompressed();
  detail::finalize_xz(d);
  return out;
}

}  // namespace pgvi
