// Command-line front end: fit / draw / gibbs / cv / simulate / compare.
// Exit codes: 0 ok, 2 parse, 3 data, 4 numerical, 5 stopped at the
// iteration cap (outputs are still written).

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pgvi/pgvi.hpp"

using namespace pgvi;

namespace {

unsigned default_threads() {
  if (const char* env = std::getenv("PGVI_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1 && v <= 1024) return static_cast<unsigned>(v);
  }
  return 1;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

struct FitFlags {
  std::string scheme = "3", accel = "both", init = "em";
  double tol_elbo = 1e-8, tol_param = 1e-5;
  int max_iter = 1000;
  std::uint64_t seed = 0;
  bool round_binomial = false;

  FitOptions options() const {
    FitOptions o;
    o.scheme = scheme_from_string(scheme);
    o.accel = accel_from_string(accel);
    o.init = init_from_string(init);
    o.tol_elbo = tol_elbo;
    o.tol_param = tol_param;
    o.max_iter = max_iter;
    o.seed = seed;
    return o;
  }
};

void add_fit_flags(CLI::App* cmd, FitFlags& f) {
  cmd->add_option("--scheme", f.scheme, "factorization: 1, 2, or 3")->capture_default_str();
  cmd->add_option("--accel", f.accel, "acceleration: none, px, joint, both")
      ->capture_default_str();
  cmd->add_option("--init", f.init, "initialization: em or random")->capture_default_str();
  cmd->add_option("--tol-elbo", f.tol_elbo, "stop when the ELBO change is below this")
      ->capture_default_str();
  cmd->add_option("--tol-param", f.tol_param, "stop when the largest parameter change is below this")
      ->capture_default_str();
  cmd->add_option("--max-iter", f.max_iter, "iteration cap")->capture_default_str();
  cmd->add_option("--seed", f.seed, "seed (random init)")->capture_default_str();
  cmd->add_flag("--round-binomial", f.round_binomial,
                "round near-integer y/n instead of rejecting them");
}

DesignSet load_design(const std::string& data, const std::string& formula, bool round_binomial) {
  const Table t = read_table_file(data);
  const ModelFormula f = parse_formula(formula);
  BuildOptions bo;
  bo.round_binomial = round_binomial;
  DesignSet d = build_design(t, f, bo);
  for (const auto& w : d.warnings) std::cerr << "note: " << w << '\n';
  return d;
}

int cmd_fit(const std::string& data, const std::string& formula, const FitFlags& flags,
            const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const DesignSet d = load_design(data, formula, flags.round_binomial);
  const PriorSpec prior = PriorSpec::standard(d.meta);
  const FitReport rep = fit(d, prior, flags.options());
  FitBundle b = make_bundle(d, prior, rep, data, digest_file(data));
  save_fit(out, b);
  std::cout << "fit: " << to_string(rep.state.scheme) << "/" << to_string(rep.options.accel)
            << "  iterations=" << rep.iterations << "  elbo=" << detail::fmt_g17(rep.elbo_trace.back())
            << "  stopped=" << to_string(rep.converged_by)
            << "  wall=" << detail::fmt_g17(seconds_since(t0)) << "s\n";
  if (rep.converged_by == StopReason::max_iter) {
    std::cerr << "stopped at the iteration cap before reaching either tolerance\n";
    return 5;
  }
  return 0;
}

int cmd_draw(const std::string& fitpath, Eigen::Index samples, const std::string& mavb,
             double tau2, std::uint64_t seed, unsigned threads, const std::string& out) {
  const FitBundle b = load_fit(fitpath);
  if (samples < 1) throw DataError("need at least one draw");
  PosteriorDraws dr = sample_q(b.meta, b.state, samples, seed, threads);
  if (mavb == "improper") {
    dr = mavb_improper(b.meta, dr, seed + 1, threads);
  } else if (mavb == "proper") {
    dr = mavb_proper(b.meta, dr, tau2, seed + 1, threads);
  } else if (mavb != "off") {
    throw DataError("unknown post-processing '" + mavb + "' (use off, improper, or proper)");
  }
  save_draws(out, b.meta, dr);
  std::cout << "draw: " << dr.M() << " draws (" << dr.source << ") -> " << out << '\n';
  return 0;
}

int cmd_gibbs(const std::string& data, const std::string& formula, const GibbsOptions& opts,
              bool round_binomial, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const DesignSet d = load_design(data, formula, round_binomial);
  const PriorSpec prior = PriorSpec::standard(d.meta);
  const GibbsChain chain = gibbs_run(d, prior, opts);
  save_draws(out, d.meta, chain.draws);
  std::cout << "gibbs: " << chain.draws.M() << " retained sweeps (burn-in " << opts.burn_in
            << ", thin " << opts.thin << ")  wall=" << detail::fmt_g17(seconds_since(t0))
            << "s -> " << out << '\n';
  return 0;
}

int cmd_cv(const std::string& data, const std::string& formula, const FitFlags& flags,
           int folds, std::uint64_t cv_seed, const std::string& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const DesignSet d = load_design(data, formula, flags.round_binomial);
  const PriorSpec prior = PriorSpec::standard(d.meta);
  CvOptions cv;
  cv.folds = folds;
  cv.seed = cv_seed;
  const CvResult res = kfold_cv(d, prior, flags.options(), cv);

  KVDoc doc;
  doc.add("format", std::string("pgvi.cv.1"));
  doc.add("version", std::string(version_string));
  doc.add("data.path", data);
  doc.add("data.digest", digest_file(data));
  doc.add("formula", formula);
  doc.add("scheme", flags.scheme);
  doc.add("accel", flags.accel);
  doc.add("folds", folds);
  doc.add("seed", cv_seed);
  doc.add("deviance.pooled", res.pooled_deviance);
  for (std::size_t k = 0; k < res.folds.size(); ++k) {
    doc.add("deviance.fold." + std::to_string(k + 1), res.folds[k].deviance);
    doc.add("rows.fold." + std::to_string(k + 1), res.folds[k].rows);
  }
  for (std::size_t i = 0; i < res.warnings.size(); ++i)
    doc.add("warning." + std::to_string(i + 1), res.warnings[i]);
  doc.add("timing.total", seconds_since(t0));
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw DataError("cannot write '" + out + "'");
    doc.write(f);
  }
  std::cout << "cv: pooled held-out deviance = " << detail::fmt_g17(res.pooled_deviance)
            << " over " << folds << " folds\n";
  for (const auto& w : res.warnings) std::cerr << "note: " << w << '\n';
  return 0;
}

int cmd_simulate(const SimConfig& cfg, std::uint64_t seed, const std::string& out,
                 const std::string& truth_out, const std::string& from_fit,
                 const std::string& data) {
  if (!from_fit.empty()) {
    // refresh the response of an existing dataset at the fitted means
    if (data.empty()) throw DataError("--from-fit needs --data");
    const FitBundle b = load_fit(from_fit);
    Table t = read_table_file(data);
    DesignSet d = build_design(t, b.meta.formula);
    if (d.meta.q != b.meta.q || d.meta.p != b.meta.p)
      throw DataError("dataset shape does not match the fitted model");
    const Eigen::VectorXd y = simulate_response(d, b.state.mu_beta, b.state.mu_alpha, seed);
    auto& ycol = t.cols[static_cast<std::size_t>(t.column(b.meta.formula.response))];
    if (d.N() != static_cast<Eigen::Index>(ycol.size()))
      throw DataError("cannot refresh a dataset with zero-trial rows");
    for (Eigen::Index i = 0; i < d.N(); ++i)
      ycol[static_cast<std::size_t>(i)] = std::to_string(static_cast<long>(y(i)));
    std::ofstream f(out);
    if (!f) throw DataError("cannot write '" + out + "'");
    write_table(f, t);
    std::cout << "simulate: refreshed response for " << d.N() << " rows -> " << out << '\n';
    return 0;
  }

  const SimData sim = simulate_crossed(cfg, seed);
  std::ofstream f(out);
  if (!f) throw DataError("cannot write '" + out + "'");
  f << "# formula = " << sim.formula << '\n';
  f << "# seed = " << seed << '\n';
  write_table(f, sim.table);
  if (!f) throw DataError("failed while writing '" + out + "'");
  std::cout << "simulate: " << cfg.N << " rows -> " << out << "\n  formula: " << sim.formula
            << '\n';

  if (!truth_out.empty()) {
    const DesignSet d = build_design(sim.table, parse_formula(sim.formula));
    KVDoc doc;
    doc.add("format", std::string("pgvi.truth.1"));
    doc.add("version", std::string(version_string));
    doc.add("seed", seed);
    doc.add("formula", sim.formula);
    const auto bn = d.meta.beta_names();
    const auto an = d.meta.alpha_names();
    if (static_cast<Eigen::Index>(bn.size()) != sim.beta.size() ||
        static_cast<Eigen::Index>(an.size()) != sim.alpha.size())
      throw NumericalError("generated truth does not line up with the built design");
    for (std::size_t i = 0; i < bn.size(); ++i)
      doc.add(bn[i], sim.beta(static_cast<Eigen::Index>(i)));
    for (std::size_t i = 0; i < an.size(); ++i)
      doc.add(an[i], sim.alpha(static_cast<Eigen::Index>(i)));
    std::ofstream tf(truth_out);
    if (!tf) throw DataError("cannot write '" + truth_out + "'");
    doc.write(tf);
  }
  return 0;
}

int cmd_compare(const std::string& ref_path, const std::string& cand_path,
                const std::string& truth_path, const std::string& out) {
  const DrawsFile ref = load_draws(ref_path);
  const DrawsFile cand = load_draws(cand_path);
  if (ref.columns != cand.columns)
    throw DataError("draw files do not share a column layout");

  KVDoc doc;
  doc.add("format", std::string("pgvi.compare.1"));
  doc.add("version", std::string(version_string));
  doc.add("ref.path", ref_path);
  doc.add("ref.digest", digest_file(ref_path));
  doc.add("ref.source", ref.draws.source);
  doc.add("cand.path", cand_path);
  doc.add("cand.digest", digest_file(cand_path));
  doc.add("cand.source", cand.draws.source);

  const Eigen::VectorXd acc_beta = accuracy_columns(ref.draws.beta, cand.draws.beta);
  const Eigen::VectorXd acc_alpha = accuracy_columns(ref.draws.alpha, cand.draws.alpha);
  const Eigen::Index p = acc_beta.size(), q = acc_alpha.size();
  doc.add("accuracy.fixed_mean", p ? acc_beta.mean() : 0.0);
  doc.add("accuracy.random_mean", q ? acc_alpha.mean() : 0.0);
  const Eigen::VectorXd bias_beta =
      (cand.draws.beta.colwise().mean() - ref.draws.beta.colwise().mean()).transpose();
  const Eigen::VectorXd bias_alpha =
      (cand.draws.alpha.colwise().mean() - ref.draws.alpha.colwise().mean()).transpose();
  doc.add("bias.fixed_mean", p ? bias_beta.mean() : 0.0);
  doc.add("bias.random_mean", q ? bias_alpha.mean() : 0.0);

  // per-effect aggregates, using the block shapes from the draws manifest
  Eigen::Index at = 0;
  for (std::size_t j = 0; j < ref.effect_names.size(); ++j) {
    const Eigen::Index w =
        static_cast<Eigen::Index>(ref.effect_d[j]) * static_cast<Eigen::Index>(ref.effect_g[j]);
    doc.add("accuracy.effect." + ref.effect_names[j],
            w ? acc_alpha.segment(at, w).mean() : 0.0);
    doc.add("bias.effect." + ref.effect_names[j], w ? bias_alpha.segment(at, w).mean() : 0.0);
    at += w;
  }
  for (Eigen::Index c = 0; c < p; ++c)
    doc.add("accuracy.col." + ref.columns[static_cast<std::size_t>(c)], acc_beta(c));
  for (Eigen::Index c = 0; c < q; ++c)
    doc.add("accuracy.col." + ref.columns[static_cast<std::size_t>(p + c)], acc_alpha(c));

  if (!truth_path.empty()) {
    std::ifstream tf(truth_path);
    if (!tf) throw DataError("cannot open truth document '" + truth_path + "'");
    const KVDoc truth = KVDoc::read(tf);
    Eigen::VectorXd tv(p + q);
    for (Eigen::Index c = 0; c < p + q; ++c)
      tv(c) = truth.get_double(ref.columns[static_cast<std::size_t>(c)]);
    Eigen::MatrixXd ref_cols(ref.draws.beta.rows(), p + q);
    ref_cols << ref.draws.beta, ref.draws.alpha;
    Eigen::MatrixXd cand_cols(cand.draws.beta.rows(), p + q);
    cand_cols << cand.draws.beta, cand.draws.alpha;
    if (p > 0) {
      doc.add("coverage.ref.fixed", coverage(ref_cols.leftCols(p), tv.head(p)));
      doc.add("coverage.cand.fixed", coverage(cand_cols.leftCols(p), tv.head(p)));
    }
    if (q > 0) {
      doc.add("coverage.ref.random", coverage(ref_cols.rightCols(q), tv.tail(q)));
      doc.add("coverage.cand.random", coverage(cand_cols.rightCols(q), tv.tail(q)));
    }
  }

  if (!out.empty()) {
    std::ofstream f(out);
    if (!f) throw DataError("cannot write '" + out + "'");
    doc.write(f);
  }
  std::cout << "compare: fixed accuracy " << detail::fmt_g17(doc.get_double("accuracy.fixed_mean"))
            << ", random accuracy " << detail::fmt_g17(doc.get_double("accuracy.random_mean"))
            << ", fixed bias " << detail::fmt_g17(doc.get_double("bias.fixed_mean")) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variational and sampling engines for binomial hierarchical models"};
  app.set_version_flag("--version", std::string(version_string));
  app.require_subcommand(1);

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit by coordinate-ascent variational inference");
  std::string fit_data, fit_formula, fit_out;
  FitFlags fit_flags;
  fit_cmd->add_option("--data", fit_data, "input table")->required();
  fit_cmd->add_option("--formula", fit_formula, "model formula, e.g. \"y/n ~ 1 + x + (1|g)\"")
      ->required();
  fit_cmd->add_option("--out", fit_out, "fitted-model document to write")->required();
  add_fit_flags(fit_cmd, fit_flags);

  // draw
  auto* draw_cmd = app.add_subcommand("draw", "sample from a fitted model document");
  std::string draw_fit, draw_out, draw_mavb = "off";
  Eigen::Index draw_samples = 4000;
  double draw_tau2 = 1.0;
  std::uint64_t draw_seed = 0;
  unsigned draw_threads = default_threads();
  draw_cmd->add_option("--fit", draw_fit, "fitted-model document")->required();
  draw_cmd->add_option("--out", draw_out, "draws file to write")->required();
  draw_cmd->add_option("--samples", draw_samples, "number of draws")->capture_default_str();
  draw_cmd->add_option("--mavb", draw_mavb, "post-processing: off, improper, proper")
      ->capture_default_str();
  draw_cmd->add_option("--tau2", draw_tau2, "working-prior variance for --mavb proper")
      ->capture_default_str();
  draw_cmd->add_option("--seed", draw_seed, "seed")->capture_default_str();
  draw_cmd->add_option("--threads", draw_threads, "worker threads")->capture_default_str();

  // gibbs
  auto* gibbs_cmd = app.add_subcommand("gibbs", "run the data-augmented Gibbs sampler");
  std::string gibbs_data, gibbs_formula, gibbs_out;
  GibbsOptions gibbs_opts;
  bool gibbs_no_recenter = false, gibbs_round = false;
  gibbs_cmd->add_option("--data", gibbs_data, "input table")->required();
  gibbs_cmd->add_option("--formula", gibbs_formula, "model formula")->required();
  gibbs_cmd->add_option("--out", gibbs_out, "draws file to write")->required();
  gibbs_cmd->add_option("--sweeps", gibbs_opts.sweeps, "retained sweeps")->capture_default_str();
  gibbs_cmd->add_option("--burn-in", gibbs_opts.burn_in, "discarded initial sweeps")
      ->capture_default_str();
  gibbs_cmd->add_option("--thin", gibbs_opts.thin, "keep every k-th sweep")->capture_default_str();
  gibbs_cmd->add_flag("--no-recenter", gibbs_no_recenter, "disable the group-mean move");
  gibbs_cmd->add_option("--seed", gibbs_opts.seed, "seed")->capture_default_str();
  gibbs_cmd->add_flag("--round-binomial", gibbs_round,
                      "round near-integer y/n instead of rejecting them");

  // cv
  auto* cv_cmd = app.add_subcommand("cv", "k-fold cross validation on held-out deviance");
  std::string cv_data, cv_formula, cv_out;
  FitFlags cv_flags;
  int cv_folds = 10;
  std::uint64_t cv_seed = 0;
  cv_cmd->add_option("--data", cv_data, "input table")->required();
  cv_cmd->add_option("--formula", cv_formula, "model formula")->required();
  cv_cmd->add_option("--out", cv_out, "report document to write");
  cv_cmd->add_option("--folds", cv_folds, "number of folds")->capture_default_str();
  cv_cmd->add_option("--cv-seed", cv_seed, "fold-assignment seed")->capture_default_str();
  add_fit_flags(cv_cmd, cv_flags);

  // simulate
  auto* sim_cmd = app.add_subcommand("simulate", "generate a crossed-design dataset");
  SimConfig sim_cfg;
  std::string sim_out, sim_truth_out, sim_from_fit, sim_data;
  std::uint64_t sim_seed = 0;
  sim_cmd->add_option("--rows", sim_cfg.N, "observations")->capture_default_str();
  sim_cmd->add_option("--fixed", sim_cfg.p, "correlated covariates")->capture_default_str();
  sim_cmd->add_option("--groups", sim_cfg.groups, "group count per effect (repeatable)")
      ->capture_default_str();
  sim_cmd->add_option("--spurious", sim_cfg.spurious_groups,
                      "group counts for no-signal grouping columns");
  sim_cmd->add_option("--sigma-beta", sim_cfg.sigma_beta, "sd of the slope draws")
      ->capture_default_str();
  sim_cmd->add_option("--sigma-alpha", sim_cfg.sigma_alpha, "sd of the group effects")
      ->capture_default_str();
  sim_cmd->add_option("--rho", sim_cfg.rho, "covariate autocorrelation")->capture_default_str();
  sim_cmd->add_option("--trials", sim_cfg.trials, "binomial trials per row")
      ->capture_default_str();
  sim_cmd->add_option("--seed", sim_seed, "seed")->capture_default_str();
  sim_cmd->add_option("--out", sim_out, "dataset to write")->required();
  sim_cmd->add_option("--truth-out", sim_truth_out, "coefficient-truth document to write");
  sim_cmd->add_option("--from-fit", sim_from_fit,
                      "fitted-model document: refresh --data's response at the fitted means");
  sim_cmd->add_option("--data", sim_data, "dataset whose response to refresh (with --from-fit)");

  // compare
  auto* cmp_cmd = app.add_subcommand("compare", "compare two draws files");
  std::string cmp_ref, cmp_cand, cmp_truth, cmp_out;
  cmp_cmd->add_option("--ref", cmp_ref, "reference draws file")->required();
  cmp_cmd->add_option("--cand", cmp_cand, "candidate draws file")->required();
  cmp_cmd->add_option("--truth", cmp_truth, "coefficient-truth document (adds coverage)");
  cmp_cmd->add_option("--out", cmp_out, "report document to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(fit_cmd)) return cmd_fit(fit_data, fit_formula, fit_flags, fit_out);
    if (app.got_subcommand(draw_cmd))
      return cmd_draw(draw_fit, draw_samples, draw_mavb, draw_tau2, draw_seed, draw_threads,
                      draw_out);
    if (app.got_subcommand(gibbs_cmd)) {
      gibbs_opts.recenter = !gibbs_no_recenter;
      return cmd_gibbs(gibbs_data, gibbs_formula, gibbs_opts, gibbs_round, gibbs_out);
    }
    if (app.got_subcommand(cv_cmd))
      return cmd_cv(cv_data, cv_formula, cv_flags, cv_folds, cv_seed, cv_out);
    if (app.got_subcommand(sim_cmd))
      return cmd_simulate(sim_cfg, sim_seed, sim_out, sim_truth_out, sim_from_fit, sim_data);
    if (app.got_subcommand(cmp_cmd)) return cmd_compare(cmp_ref, cmp_cand, cmp_truth, cmp_out);
  } catch (const FormulaError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const NumericalError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 5;
  }
  return 0;
}
