#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pgvi/pgvi.hpp"

using namespace pgvi;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
  static fs::path p = [] {
    fs::path d = fs::temp_directory_path() / "pgvi_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return p;
}

std::string at(const std::string& name) { return (work_dir() / name).string(); }

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(PGVI_CLI_PATH) + " " + args + " >" + at("last_out.txt") + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

KVDoc read_doc(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  return KVDoc::read(in);
}

const std::string kFormula = "y/n ~ 1 + x1 + (1|g1)";

// one shared dataset + fit for the command-line cases
void ensure_dataset() {
  static bool done = [] {
    REQUIRE(run_cli("simulate --rows 250 --fixed 1 --groups 4 --trials 2 --seed 3 --out " +
                    at("sim.csv") + " --truth-out " + at("truth.kv")) == 0);
    REQUIRE(run_cli("fit --data " + at("sim.csv") + " --formula \"" + kFormula + "\" --out " +
                    at("fit.kv")) == 0);
    return true;
  }();
  (void)done;
}

}  // namespace

TEST_CASE("ordered document round trips values") {
  KVDoc doc;
  doc.add("name", std::string("abc"));
  doc.add("x", 0.1 + 0.2);
  doc.add("k", 42);
  doc.add("u", std::uint64_t(1) << 60);
  doc.add_vector("v", Eigen::Vector3d(1.5, -2.25, 1e-17));
  Eigen::MatrixXd m(2, 2);
  m << 1, 2, 3, 4.5;
  doc.add_matrix("m", m);
  doc.add_joined("parts", {"a", "b", "c"});

  std::stringstream ss;
  doc.write(ss);
  const KVDoc back = KVDoc::read(ss);

  CHECK(back.get("name") == "abc");
  CHECK(back.get_double("x") == 0.1 + 0.2);
  CHECK(back.get_long("k") == 42);
  CHECK(back.get_u64("u") == std::uint64_t(1) << 60);
  CHECK((back.get_vector("v") - Eigen::Vector3d(1.5, -2.25, 1e-17)).norm() == 0.0);
  CHECK((back.get_matrix("m", 2, 2) - m).norm() == 0.0);
  CHECK(back.get_parts("parts") == std::vector<std::string>{"a", "b", "c"});

  CHECK_THROWS_AS(back.get("missing"), DataError);
  CHECK_THROWS_AS(back.get_long("name"), DataError);
  CHECK_THROWS_AS(back.get_matrix("v", 2, 2), DataError);
  CHECK(back.get_or("missing", "zz") == "zz");

  std::stringstream bad("left right\n");
  CHECK_THROWS_AS(KVDoc::read(bad), DataError);
}

TEST_CASE("comment prefixed documents stop at the payload") {
  std::stringstream ss;
  ss << "# format = pgvi.draws.1\n# seed = 9\n# note without equals\nbeta.1,beta.2\n1,2\n";
  const KVDoc head = KVDoc::read(ss, true);
  CHECK(head.get("format") == "pgvi.draws.1");
  CHECK(head.get_u64("seed") == 9);
  std::string rest;
  std::getline(ss, rest);
  CHECK(rest == "1,2");  // the header line was consumed by the doc reader's peek
}

TEST_CASE("file digests track content") {
  {
    std::ofstream(at("d1.txt")) << "same bytes";
    std::ofstream(at("d2.txt")) << "same bytes";
    std::ofstream(at("d3.txt")) << "other bytes";
  }
  CHECK(digest_file(at("d1.txt")) == digest_file(at("d2.txt")));
  CHECK(digest_file(at("d1.txt")) != digest_file(at("d3.txt")));
  CHECK(digest_file(at("d1.txt")).size() == 16);
  CHECK_THROWS_AS(digest_file(at("no_such_file")), DataError);
}

TEST_CASE("fitted model documents round trip") {
  SimConfig cfg;
  cfg.N = 150;
  cfg.p = 1;
  cfg.groups = {3, 2};
  cfg.trials = 2;
  const auto sim = simulate_crossed(cfg, 5);
  const auto d = build_design(sim.table, parse_formula(sim.formula));
  const PriorSpec prior = PriorSpec::standard(d.meta);

  for (Scheme s : {Scheme::I, Scheme::II, Scheme::III}) {
    FitOptions opt;
    opt.scheme = s;
    opt.max_iter = 300;
    const FitReport rep = fit(d, prior, opt);
    const FitBundle b = make_bundle(d, prior, rep, "sim.csv", "abc123");

    std::stringstream ss;
    encode_fit(b).write(ss);
    const FitBundle r = decode_fit(KVDoc::read(ss));

    CHECK(r.state.scheme == s);
    CHECK((r.state.mu_beta - b.state.mu_beta).norm() == 0.0);
    CHECK((r.state.mu_alpha - b.state.mu_alpha).norm() == 0.0);
    CHECK((r.state.alpha_sds(r.meta) - b.state.alpha_sds(b.meta)).norm() == 0.0);
    REQUIRE(r.state.iw.size() == 2);
    CHECK(r.state.iw[0].nu == b.state.iw[0].nu);
    CHECK((r.state.iw[0].Phi - b.state.iw[0].Phi).norm() == 0.0);
    CHECK((r.state.sigma_einv[1] - b.state.sigma_einv[1]).norm() == 0.0);
    switch (s) {
      case Scheme::I:
        CHECK((r.state.cov_beta - b.state.cov_beta).norm() == 0.0);
        REQUIRE(r.state.cov_alpha.size() == 2);
        CHECK((r.state.cov_alpha[0][2] - b.state.cov_alpha[0][2]).norm() == 0.0);
        break;
      case Scheme::II:
        CHECK((r.state.cov_alpha_joint - b.state.cov_alpha_joint).norm() == 0.0);
        break;
      default:
        CHECK((r.state.cov_joint - b.state.cov_joint).norm() == 0.0);
        break;
    }
    CHECK(to_string(r.meta.formula) == to_string(b.meta.formula));
    CHECK(r.meta.effects[0].levels == b.meta.effects[0].levels);
    CHECK(r.meta.effects[1].fixed_index == b.meta.effects[1].fixed_index);
    CHECK(r.prior.effects[0].nu == prior.effects[0].nu);
    CHECK(r.options.seed == opt.seed);
    CHECK(r.iterations == rep.iterations);
    CHECK(r.converged_by == rep.converged_by);
    REQUIRE(!r.elbo_trace.empty());
    CHECK(r.elbo_trace.back() == rep.elbo_trace.back());
    CHECK(r.data_digest == "abc123");

    std::stringstream junk("format = other\n");
    CHECK_THROWS_AS(decode_fit(KVDoc::read(junk)), DataError);
  }
}

TEST_CASE("draws files round trip") {
  SimConfig cfg;
  cfg.N = 120;
  cfg.p = 1;
  cfg.groups = {3};
  const auto sim = simulate_crossed(cfg, 6);
  const auto d = build_design(sim.table, parse_formula(sim.formula));
  const PriorSpec prior = PriorSpec::standard(d.meta);
  FitOptions opt;
  const FitReport rep = fit(d, prior, opt);

  PosteriorDraws dr = sample_q(d.meta, rep.state, 40, 17);
  save_draws(at("draws_rt.csv"), d.meta, dr);
  const DrawsFile f = load_draws(at("draws_rt.csv"));
  CHECK(f.draws.source == "raw_q");
  CHECK(f.draws.seed == 17);
  CHECK(std::isnan(f.draws.tau2));
  CHECK(f.columns == draw_column_names(d.meta));
  CHECK((f.draws.beta - dr.beta).norm() == 0.0);
  CHECK((f.draws.alpha - dr.alpha).norm() == 0.0);
  REQUIRE(f.draws.sigma.size() == 1);
  CHECK((f.draws.sigma[0] - dr.sigma[0]).norm() == 0.0);
  CHECK(f.effect_g == std::vector<int>{3});

  const PosteriorDraws pr = mavb_proper(d.meta, dr, 2.5, 18);
  save_draws(at("draws_pr.csv"), d.meta, pr);
  const DrawsFile fp = load_draws(at("draws_pr.csv"));
  CHECK(fp.draws.source == "mavb_proper");
  CHECK(fp.draws.tau2 == 2.5);

  std::ofstream(at("not_draws.csv")) << "y,n\n1,2\n";
  CHECK_THROWS_AS(load_draws(at("not_draws.csv")), DataError);
}

TEST_CASE("command line pipeline simulates fits draws and compares") {
  ensure_dataset();

  // generator reproducibility through the front end
  REQUIRE(run_cli("simulate --rows 250 --fixed 1 --groups 4 --trials 2 --seed 3 --out " +
                  at("sim_b.csv")) == 0);
  CHECK(digest_file(at("sim.csv")) == digest_file(at("sim_b.csv")));

  const FitBundle b = load_fit(at("fit.kv"));
  CHECK(b.converged_by != StopReason::max_iter);
  CHECK(b.rows == 250);
  CHECK(b.data_digest == digest_file(at("sim.csv")));

  // identical seeds give identical draw files
  const std::string draw_args = "draw --fit " + at("fit.kv") + " --samples 400 --seed 5 --out ";
  REQUIRE(run_cli(draw_args + at("qa.csv")) == 0);
  REQUIRE(run_cli(draw_args + at("qb.csv")) == 0);
  CHECK(digest_file(at("qa.csv")) == digest_file(at("qb.csv")));
  CHECK(load_draws(at("qa.csv")).draws.M() == 400);

  // comparing a file against itself: perfect accuracy, zero bias, coverage keys
  REQUIRE(run_cli("compare --ref " + at("qa.csv") + " --cand " + at("qb.csv") + " --truth " +
                  at("truth.kv") + " --out " + at("cmp.kv")) == 0);
  const KVDoc cmp = read_doc(at("cmp.kv"));
  CHECK(cmp.get_double("accuracy.fixed_mean") == 1.0);
  CHECK(cmp.get_double("accuracy.random_mean") == 1.0);
  CHECK(cmp.get_double("bias.fixed_mean") == 0.0);
  CHECK(cmp.has("accuracy.effect.g1"));
  CHECK(cmp.has("coverage.cand.random"));
  CHECK(cmp.get_double("coverage.ref.fixed") == cmp.get_double("coverage.cand.fixed"));

  // post-processed draws and the sampler produce the same column layout
  REQUIRE(run_cli("draw --fit " + at("fit.kv") +
                  " --samples 300 --seed 6 --mavb improper --out " + at("qm.csv")) == 0);
  CHECK(load_draws(at("qm.csv")).draws.source == "mavb_improper");
  REQUIRE(run_cli("gibbs --data " + at("sim.csv") + " --formula \"" + kFormula +
                  "\" --sweeps 80 --burn-in 20 --seed 1 --out " + at("gb.csv")) == 0);
  const DrawsFile gb = load_draws(at("gb.csv"));
  CHECK(gb.draws.source == "gibbs");
  CHECK(gb.draws.M() == 80);
  REQUIRE(run_cli("compare --ref " + at("gb.csv") + " --cand " + at("qm.csv") + " --out " +
                  at("cmp2.kv")) == 0);
  CHECK(read_doc(at("cmp2.kv")).get_double("accuracy.random_mean") > 0.2);
}

TEST_CASE("iteration cap exits with the documented code") {
  ensure_dataset();
  CHECK(run_cli("fit --data " + at("sim.csv") + " --formula \"" + kFormula +
                "\" --max-iter 1 --out " + at("fit_cap.kv")) == 5);
  const FitBundle b = load_fit(at("fit_cap.kv"));  // document is still written
  CHECK(b.converged_by == StopReason::max_iter);
  CHECK(b.iterations == 1);
}

TEST_CASE("fit documents are reproducible modulo timing") {
  ensure_dataset();
  REQUIRE(run_cli("fit --data " + at("sim.csv") + " --formula \"" + kFormula + "\" --out " +
                  at("fit_r1.kv")) == 0);
  REQUIRE(run_cli("fit --data " + at("sim.csv") + " --formula \"" + kFormula + "\" --out " +
                  at("fit_r2.kv")) == 0);
  const KVDoc a = read_doc(at("fit_r1.kv"));
  const KVDoc bdoc = read_doc(at("fit_r2.kv"));
  REQUIRE(a.items.size() == bdoc.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    if (a.items[i].first.rfind("timing.", 0) == 0) continue;
    CHECK(a.items[i] == bdoc.items[i]);
  }
}

TEST_CASE("translation moves do not slow the factored scheme") {
  REQUIRE(run_cli("simulate --rows 300 --fixed 1 --groups 6 --groups 6 --seed 11 --out " +
                  at("cross.csv")) == 0);
  const std::string f2 = "y/n ~ 1 + x1 + (1|g1) + (1|g2)";
  REQUIRE(run_cli("fit --data " + at("cross.csv") + " --formula \"" + f2 +
                  "\" --scheme 1 --accel none --max-iter 4000 --out " + at("f_none.kv")) == 0);
  REQUIRE(run_cli("fit --data " + at("cross.csv") + " --formula \"" + f2 +
                  "\" --scheme 1 --accel both --max-iter 4000 --out " + at("f_both.kv")) == 0);
  const KVDoc none = read_doc(at("f_none.kv"));
  const KVDoc both = read_doc(at("f_both.kv"));
  CHECK(both.get_long("iterations") <= none.get_long("iterations"));
  const double e0 = none.get_double("elbo"), e1 = both.get_double("elbo");
  CHECK(std::abs(e0 - e1) < 1e-3 * (1.0 + std::abs(e0)));
}

TEST_CASE("cross validation runs deterministically from the front end") {
  ensure_dataset();
  const std::string args = "cv --data " + at("sim.csv") + " --formula \"" + kFormula +
                           "\" --folds 3 --cv-seed 2 --out ";
  REQUIRE(run_cli(args + at("cv_a.kv")) == 0);
  REQUIRE(run_cli(args + at("cv_b.kv")) == 0);
  const KVDoc a = read_doc(at("cv_a.kv"));
  CHECK(a.get_double("deviance.pooled") == read_doc(at("cv_b.kv")).get_double("deviance.pooled"));
  CHECK(a.get_double("deviance.pooled") > 0.0);
  CHECK(a.get_long("rows.fold.1") + a.get_long("rows.fold.2") + a.get_long("rows.fold.3") == 250);
}

TEST_CASE("response refresh through the front end") {
  ensure_dataset();
  const std::string args = "simulate --from-fit " + at("fit.kv") + " --data " + at("sim.csv") +
                           " --seed 5 --out ";
  REQUIRE(run_cli(args + at("ref_a.csv")) == 0);
  REQUIRE(run_cli(args + at("ref_b.csv")) == 0);
  CHECK(digest_file(at("ref_a.csv")) == digest_file(at("ref_b.csv")));
  const Table t = read_table_file(at("ref_a.csv"));
  REQUIRE(t.rows() == 250);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    const double y = parse_number(t.col("y")[i], "y");
    CHECK(y >= 0.0);
    CHECK(y <= 2.0);
  }
  // same trials, fresh response
  CHECK(t.col("n") == read_table_file(at("sim.csv")).col("n"));
}

TEST_CASE("error paths use distinct exit codes") {
  ensure_dataset();
  CHECK(run_cli("fit --data " + at("sim.csv") + " --formula \"y ~~ x\" --out " +
                at("junk.kv")) == 2);
  CHECK(run_cli("fit --data " + at("sim.csv") +
                " --formula \"y/n ~ 1 + nope + (1|g1)\" --out " + at("junk.kv")) == 3);
  CHECK(run_cli("draw --fit " + at("no_such_fit.kv") + " --out " + at("junk.csv")) == 3);
  CHECK(run_cli("simulate --from-fit " + at("fit.kv") + " --out " + at("junk.csv")) == 3);
  CHECK(run_cli("fit --data " + at("sim.csv")) == 2);  // missing required flags
}
