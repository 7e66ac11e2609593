#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pgvi/cavi.hpp"
#include "pgvi/design.hpp"
#include "pgvi/draws.hpp"
#include "pgvi/prior.hpp"
#include "pgvi/state.hpp"

namespace pgvi {

namespace detail {

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Ordered key = value document. Writes stay in insertion order so diffs are
// stable; reads index by key. '#' lines are comments.
struct KVDoc {
  std::vector<std::pair<std::string, std::string>> items;
  std::map<std::string, std::size_t> index;

  void add(const std::string& key, const std::string& value) {
    index[key] = items.size();
    items.emplace_back(key, value);
  }
  void add(const std::string& key, double v) { add(key, detail::fmt_g17(v)); }
  void add(const std::string& key, int v) { add(key, std::to_string(v)); }
  void add(const std::string& key, Eigen::Index v) { add(key, std::to_string(v)); }
  void add(const std::string& key, std::uint64_t v) { add(key, std::to_string(v)); }
  void add_joined(const std::string& key, const std::vector<std::string>& parts) {
    std::string s;
    for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? "," : "") + parts[i];
    add(key, s);
  }
  void add_vector(const std::string& key, const Eigen::VectorXd& v) {
    std::string s;
    for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + detail::fmt_g17(v(i));
    add(key, s);
  }
  void add_matrix(const std::string& key, const Eigen::MatrixXd& m) {  // row major
    std::string s;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c)
        s += ((r + c) ? "," : "") + detail::fmt_g17(m(r, c));
    add(key, s);
  }

  bool has(const std::string& key) const { return index.count(key) != 0; }
  const std::string& get(const std::string& key) const {
    const auto it = index.find(key);
    if (it == index.end()) throw DataError("document is missing key '" + key + "'");
    return items[it->second].second;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    const auto it = index.find(key);
    return it == index.end() ? fallback : items[it->second].second;
  }
  double get_double(const std::string& key) const {
    return parse_number(get(key), "key '" + key + "'");
  }
  long get_long(const std::string& key) const {
    try {
      return std::stol(get(key));
    } catch (const std::logic_error&) {
      throw DataError("key '" + key + "' is not an integer");
    }
  }
  std::uint64_t get_u64(const std::string& key) const {
    try {
      return std::stoull(get(key));
    } catch (const std::logic_error&) {
      throw DataError("key '" + key + "' is not an unsigned integer");
    }
  }
  std::vector<std::string> get_parts(const std::string& key) const {
    std::vector<std::string> out;
    const std::string& s = get(key);
    if (s.empty()) return out;
    std::size_t start = 0;
    for (;;) {
      const std::size_t end = s.find(',', start);
      out.push_back(s.substr(start, end == std::string::npos ? end : end - start));
      if (end == std::string::npos) break;
      start = end + 1;
    }
    return out;
  }
  Eigen::VectorXd get_vector(const std::string& key) const {
    const auto parts = get_parts(key);
    Eigen::VectorXd v(static_cast<Eigen::Index>(parts.size()));
    for (std::size_t i = 0; i < parts.size(); ++i)
      v(static_cast<Eigen::Index>(i)) = parse_number(parts[i], "key '" + key + "'");
    return v;
  }
  Eigen::MatrixXd get_matrix(const std::string& key, Eigen::Index rows, Eigen::Index cols) const {
    const Eigen::VectorXd flat = get_vector(key);
    if (flat.size() != rows * cols)
      throw DataError("key '" + key + "' has " + std::to_string(flat.size()) +
                      " values, expected " + std::to_string(rows * cols));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = flat(r * cols + c);
    return m;
  }

  void write(std::ostream& out, const char* prefix = "") const {
    for (const auto& [k, v] : items) out << prefix << k << " = " << v << '\n';
  }

  // Reads 'key = value' lines; with comment_prefixed, only '# key = value'
  // lines are consumed and reading stops at the first other line.
  static KVDoc read(std::istream& in, bool comment_prefixed = false) {
    KVDoc doc;
    std::string line;
    while (in.peek() != EOF && std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::string body = line;
      if (comment_prefixed) {
        if (line.empty() || line[0] != '#') break;
        body = line.substr(1);
      } else {
        if (line.empty() || line[0] == '#') continue;
      }
      const std::size_t eq = body.find('=');
      if (eq == std::string::npos) {
        if (comment_prefixed) continue;  // plain comment text
        throw DataError("malformed document line: '" + line + "'");
      }
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t");
        const auto b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
      };
      doc.add(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
    }
    return doc;
  }
};

inline std::string digest_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for digesting");
  char buf[1 << 16];
  std::uint64_t h = 0xcbf29ce484222325ull;
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  char out[20];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

// Everything a fitted-model document carries: enough to draw from the fitted
// factorization later without touching the data again.
struct FitBundle {
  ModelMeta meta;
  PriorSpec prior;
  VariationalState state;
  FitOptions options;
  std::vector<double> elbo_trace;
  int iterations = 0;
  StopReason converged_by = StopReason::max_iter;
  double final_param_change = 0.0;
  StageTimings timings;
  std::vector<std::string> warnings;
  std::string data_path;
  std::string data_digest;
  Eigen::Index rows = 0;
  Eigen::Index zero_trial_rows = 0;
};

inline FitBundle make_bundle(const DesignSet& d, const PriorSpec& prior, const FitReport& rep,
                             const std::string& data_path, const std::string& data_digest) {
  FitBundle b;
  b.meta = d.meta;
  b.prior = prior;
  b.state = rep.state;
  b.options = rep.options;
  b.elbo_trace = rep.elbo_trace;
  b.iterations = rep.iterations;
  b.converged_by = rep.converged_by;
  b.final_param_change = rep.final_param_change;
  b.timings = rep.timings;
  b.warnings = d.warnings;
  b.data_path = data_path;
  b.data_digest = data_digest;
  b.rows = d.N();
  b.zero_trial_rows = static_cast<Eigen::Index>(d.zero_rows.size());
  return b;
}

inline KVDoc encode_fit(const FitBundle& b) {
  KVDoc doc;
  doc.add("format", std::string("pgvi.fit.1"));
  doc.add("version", std::string(version_string));
  doc.add("data.path", b.data_path);
  doc.add("data.digest", b.data_digest);
  doc.add("data.rows", b.rows);
  doc.add("data.zero_trial_rows", b.zero_trial_rows);
  doc.add("formula", to_string(b.meta.formula));
  doc.add("scheme", static_cast<int>(b.state.scheme));
  doc.add("accel", to_string(b.options.accel));
  doc.add("init", to_string(b.options.init));
  doc.add("seed", b.options.seed);
  doc.add("tol.elbo", b.options.tol_elbo);
  doc.add("tol.param", b.options.tol_param);
  doc.add("max_iter", b.options.max_iter);
  doc.add("iterations", b.iterations);
  doc.add("converged_by", std::string(to_string(b.converged_by)));
  doc.add("final_param_change", b.final_param_change);
  if (!b.elbo_trace.empty()) {
    doc.add("elbo", b.elbo_trace.back());
    Eigen::VectorXd tr(static_cast<Eigen::Index>(b.elbo_trace.size()));
    for (std::size_t i = 0; i < b.elbo_trace.size(); ++i)
      tr(static_cast<Eigen::Index>(i)) = b.elbo_trace[i];
    doc.add_vector("elbo.trace", tr);
  }
  doc.add("timing.pg", b.timings.pg);
  doc.add("timing.gaussian", b.timings.gaussian);
  doc.add("timing.sigma", b.timings.sigma);
  doc.add("timing.pxvb", b.timings.pxvb);
  doc.add("timing.elbo", b.timings.elbo);
  for (std::size_t i = 0; i < b.warnings.size(); ++i)
    doc.add("warning." + std::to_string(i + 1), b.warnings[i]);

  doc.add("p", b.meta.p);
  doc.add("q", b.meta.q);
  doc.add_joined("fixed.names", b.meta.fixed_names);
  doc.add("effect.count", b.meta.n_effects());
  for (int j = 0; j < b.meta.n_effects(); ++j) {
    const auto& e = b.meta.effects[static_cast<std::size_t>(j)];
    const std::string pre = "effect." + std::to_string(j + 1) + ".";
    doc.add(pre + "name", e.name);
    doc.add(pre + "group_column", e.group_column);
    doc.add(pre + "d", e.d);
    doc.add(pre + "g", e.g);
    doc.add_joined(pre + "covariates", e.covariates);
    std::vector<std::string> fi;
    for (int k : e.fixed_index) fi.push_back(std::to_string(k));
    doc.add_joined(pre + "fixed_index", fi);
    doc.add_joined(pre + "levels", e.levels);
    doc.add("prior." + std::to_string(j + 1) + ".nu",
            b.prior.effects[static_cast<std::size_t>(j)].nu);
    doc.add_matrix("prior." + std::to_string(j + 1) + ".Phi",
                   b.prior.effects[static_cast<std::size_t>(j)].Phi);
  }
  doc.add("prior.tau2", b.prior.tau2);

  doc.add_vector("mu_beta", b.state.mu_beta);
  doc.add_vector("mu_alpha", b.state.mu_alpha);
  doc.add_vector("sd_beta", b.state.beta_sds());
  doc.add_vector("sd_alpha", b.state.alpha_sds(b.meta));
  for (std::size_t j = 0; j < b.state.iw.size(); ++j) {
    doc.add("iw." + std::to_string(j + 1) + ".nu", b.state.iw[j].nu);
    doc.add_matrix("iw." + std::to_string(j + 1) + ".Phi", b.state.iw[j].Phi);
  }
  switch (b.state.scheme) {
    case Scheme::I:
      doc.add_matrix("cov_beta", b.state.cov_beta);
      for (std::size_t j = 0; j < b.state.cov_alpha.size(); ++j)
        for (std::size_t g = 0; g < b.state.cov_alpha[j].size(); ++g)
          doc.add_matrix("cov_alpha." + std::to_string(j + 1) + "." + std::to_string(g + 1),
                         b.state.cov_alpha[j][g]);
      break;
    case Scheme::II:
      doc.add_matrix("cov_beta", b.state.cov_beta);
      doc.add_matrix("cov_alpha_joint", b.state.cov_alpha_joint);
      break;
    default:
      doc.add_matrix("cov_joint", b.state.cov_joint);
      break;
  }
  return doc;
}

inline FitBundle decode_fit(const KVDoc& doc) {
  if (doc.get_or("format", "") != "pgvi.fit.1")
    throw DataError("not a fitted-model document (missing format = pgvi.fit.1)");
  FitBundle b;
  b.data_path = doc.get_or("data.path", "");
  b.data_digest = doc.get_or("data.digest", "");
  b.rows = doc.get_long("data.rows");
  b.zero_trial_rows = doc.get_long("data.zero_trial_rows");
  b.meta.formula = parse_formula(doc.get("formula"));
  b.meta.p = static_cast<int>(doc.get_long("p"));
  b.meta.q = static_cast<int>(doc.get_long("q"));
  b.meta.fixed_names = doc.get_parts("fixed.names");
  const int J = static_cast<int>(doc.get_long("effect.count"));
  int offset = 0;
  for (int j = 0; j < J; ++j) {
    const std::string pre = "effect." + std::to_string(j + 1) + ".";
    EffectMeta e;
    e.name = doc.get(pre + "name");
    e.group_column = doc.get(pre + "group_column");
    e.d = static_cast<int>(doc.get_long(pre + "d"));
    e.g = static_cast<int>(doc.get_long(pre + "g"));
    e.col_offset = offset;
    offset += e.d * e.g;
    e.covariates = doc.get_parts(pre + "covariates");
    for (const auto& s : doc.get_parts(pre + "fixed_index"))
      e.fixed_index.push_back(static_cast<int>(parse_number(s, "fixed_index")));
    e.levels = doc.get_parts(pre + "levels");
    if (static_cast<int>(e.levels.size()) != e.g ||
        static_cast<int>(e.covariates.size()) != e.d)
      throw DataError("inconsistent effect block in document");
    b.meta.effects.push_back(std::move(e));
    EffectPrior ep;
    ep.nu = doc.get_double("prior." + std::to_string(j + 1) + ".nu");
    ep.Phi = doc.get_matrix("prior." + std::to_string(j + 1) + ".Phi",
                            b.meta.effects.back().d, b.meta.effects.back().d);
    b.prior.effects.push_back(std::move(ep));
  }
  if (offset != b.meta.q) throw DataError("effect blocks do not add up to q");
  b.prior.tau2 = doc.get_double("prior.tau2");

  b.state.scheme = static_cast<Scheme>(doc.get_long("scheme"));
  b.options.scheme = b.state.scheme;
  b.options.accel = accel_from_string(doc.get("accel"));
  b.options.init = init_from_string(doc.get("init"));
  b.options.seed = doc.get_u64("seed");
  b.options.tol_elbo = doc.get_double("tol.elbo");
  b.options.tol_param = doc.get_double("tol.param");
  b.options.max_iter = static_cast<int>(doc.get_long("max_iter"));
  b.iterations = static_cast<int>(doc.get_long("iterations"));
  b.final_param_change = doc.get_double("final_param_change");
  const std::string why = doc.get("converged_by");
  b.converged_by = why == "elbo_tol"    ? StopReason::elbo_tol
                   : why == "param_tol" ? StopReason::param_tol
                                        : StopReason::max_iter;
  if (doc.has("elbo.trace")) {
    const Eigen::VectorXd tr = doc.get_vector("elbo.trace");
    b.elbo_trace.assign(tr.data(), tr.data() + tr.size());
  }

  b.state.mu_beta = doc.get_vector("mu_beta");
  b.state.mu_alpha = doc.get_vector("mu_alpha");
  if (b.state.mu_beta.size() != b.meta.p || b.state.mu_alpha.size() != b.meta.q)
    throw DataError("coefficient blocks do not match the declared sizes");
  for (int j = 0; j < J; ++j) {
    IwBlock blk;
    blk.nu = doc.get_double("iw." + std::to_string(j + 1) + ".nu");
    blk.Phi = doc.get_matrix("iw." + std::to_string(j + 1) + ".Phi",
                             b.meta.effects[static_cast<std::size_t>(j)].d,
                             b.meta.effects[static_cast<std::size_t>(j)].d);
    b.state.iw.push_back(std::move(blk));
  }
  const int p = b.meta.p, q = b.meta.q;
  switch (b.state.scheme) {
    case Scheme::I: {
      b.state.cov_beta = doc.get_matrix("cov_beta", p, p);
      b.state.cov_alpha.resize(static_cast<std::size_t>(J));
      for (int j = 0; j < J; ++j) {
        const auto& e = b.meta.effects[static_cast<std::size_t>(j)];
        for (int g = 0; g < e.g; ++g)
          b.state.cov_alpha[static_cast<std::size_t>(j)].push_back(doc.get_matrix(
              "cov_alpha." + std::to_string(j + 1) + "." + std::to_string(g + 1), e.d, e.d));
      }
      break;
    }
    case Scheme::II:
      b.state.cov_beta = doc.get_matrix("cov_beta", p, p);
      b.state.cov_alpha_joint = doc.get_matrix("cov_alpha_joint", q, q);
      break;
    default:
      b.state.cov_joint = doc.get_matrix("cov_joint", p + q, p + q);
      break;
  }
  b.state.refresh_sigma_einv();
  return b;
}

inline void save_fit(const std::string& path, const FitBundle& b) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  encode_fit(b).write(out);
  if (!out) throw DataError("failed while writing '" + path + "'");
}

inline FitBundle load_fit(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open fitted-model document '" + path + "'");
  return decode_fit(KVDoc::read(in));
}

// ---- draw matrices as CSV with a '#'-prefixed manifest header ----

inline void save_draws(const std::string& path, const ModelMeta& meta,
                       const PosteriorDraws& dr) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  KVDoc head;
  head.add("format", std::string("pgvi.draws.1"));
  head.add("version", std::string(version_string));
  head.add("source", dr.source);
  head.add("seed", dr.seed);
  if (std::isfinite(dr.tau2)) head.add("tau2", dr.tau2);
  head.add("draws", dr.M());
  head.add("beta.count", static_cast<Eigen::Index>(dr.beta.cols()));
  head.add("alpha.count", static_cast<Eigen::Index>(dr.alpha.cols()));
  head.add("effect.count", meta.n_effects());
  for (int j = 0; j < meta.n_effects(); ++j) {
    const auto& e = meta.effects[static_cast<std::size_t>(j)];
    const std::string pre = "effect." + std::to_string(j + 1) + ".";
    head.add(pre + "name", e.name);
    head.add(pre + "d", e.d);
    head.add(pre + "g", e.g);
  }
  head.write(out, "# ");

  const auto names = draw_column_names(meta);
  for (std::size_t k = 0; k < names.size(); ++k) out << (k ? "," : "") << names[k];
  out << '\n';
  for (Eigen::Index m = 0; m < dr.M(); ++m) {
    bool first = true;
    auto put = [&](double v) {
      if (!first) out << ',';
      first = false;
      out << detail::fmt_g17(v);
    };
    for (Eigen::Index c = 0; c < dr.beta.cols(); ++c) put(dr.beta(m, c));
    for (Eigen::Index c = 0; c < dr.alpha.cols(); ++c) put(dr.alpha(m, c));
    for (const auto& s : dr.sigma)
      for (Eigen::Index c = 0; c < s.cols(); ++c) put(s(m, c));
    out << '\n';
  }
  if (!out) throw DataError("failed while writing '" + path + "'");
}

// Minimal effect shape recovered from a draws file, enough for per-effect
// aggregation without the original data.
struct DrawsFile {
  PosteriorDraws draws;
  std::vector<std::string> effect_names;
  std::vector<int> effect_d, effect_g;
  std::vector<std::string> columns;
};

inline DrawsFile load_draws(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open draws file '" + path + "'");
  KVDoc head = KVDoc::read(in, /*comment_prefixed=*/true);
  if (head.get_or("format", "") != "pgvi.draws.1")
    throw DataError("'" + path + "' is not a draws file");
  in.clear();
  in.seekg(0);
  const Table t = read_table(in);

  DrawsFile f;
  f.draws.source = head.get_or("source", "");
  f.draws.seed = head.get_u64("seed");
  if (head.has("tau2")) f.draws.tau2 = head.get_double("tau2");
  const auto M = static_cast<Eigen::Index>(t.rows());
  const auto p = static_cast<Eigen::Index>(head.get_long("beta.count"));
  const auto q = static_cast<Eigen::Index>(head.get_long("alpha.count"));
  const int J = static_cast<int>(head.get_long("effect.count"));
  Eigen::Index expect = p + q;
  for (int j = 0; j < J; ++j) {
    const std::string pre = "effect." + std::to_string(j + 1) + ".";
    f.effect_names.push_back(head.get(pre + "name"));
    f.effect_d.push_back(static_cast<int>(head.get_long(pre + "d")));
    f.effect_g.push_back(static_cast<int>(head.get_long(pre + "g")));
    expect += static_cast<Eigen::Index>(f.effect_d.back()) * f.effect_d.back();
  }
  if (static_cast<Eigen::Index>(t.names.size()) != expect)
    throw DataError("draws file has " + std::to_string(t.names.size()) +
                    " columns, manifest promises " + std::to_string(expect));
  f.columns = t.names;

  auto fill = [&](Eigen::MatrixXd& m, Eigen::Index col0, Eigen::Index cols) {
    m.resize(M, cols);
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < M; ++r)
        m(r, c) = parse_number(t.cols[static_cast<std::size_t>(col0 + c)]
                                     [static_cast<std::size_t>(r)],
                               "column '" + t.names[static_cast<std::size_t>(col0 + c)] + "'");
  };
  fill(f.draws.beta, 0, p);
  fill(f.draws.alpha, p, q);
  Eigen::Index at = p + q;
  for (int j = 0; j < J; ++j) {
    Eigen::MatrixXd s;
    const Eigen::Index w = static_cast<Eigen::Index>(f.effect_d[static_cast<std::size_t>(j)]) *
                           f.effect_d[static_cast<std::size_t>(j)];
    fill(s, at, w);
    at += w;
    f.draws.sigma.push_back(std::move(s));
  }
  return f;
}

}  // namespace pgvi
