#include <doctest.h>

#include <ivhazard/cloglog.hpp>
#include <ivhazard/simulate.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "support.hpp"

using namespace ivhazard;
using test_support::rel_err;

namespace {

DgpConfig small_config(std::uint64_t seed) {
  DgpConfig cfg;
  cfg.n_entities = 200;
  cfg.t_max = 4;
  cfg.seed = seed;
  cfg.pi_exog = {{0.5}};
  cfg.pi_inst = {{1.0}};
  cfg.psi.assign(4, -1.5);
  cfg.beta1 = {0.5};
  cfg.beta2 = {1.0};
  cfg.rho = 0.6;
  return cfg;
}

bool records_equal(const PanelDataset& a, const PanelDataset& b,
                   std::size_t limit_entities) {
  std::size_t ia = 0, ib = 0;
  auto ent_index = [](const std::string& s) {
    return static_cast<std::size_t>(std::stoul(s));
  };
  while (ia < a.records.size() && ib < b.records.size()) {
    const auto& ra = a.records[ia];
    const auto& rb = b.records[ib];
    if (ent_index(ra.entity) > limit_entities) {
      ++ia;
      continue;
    }
    if (ent_index(rb.entity) > limit_entities) {
      ++ib;
      continue;
    }
    if (ra.entity != rb.entity || ra.time != rb.time || ra.fail != rb.fail ||
        ra.endog != rb.endog || ra.exog != rb.exog ||
        ra.instruments != rb.instruments)
      return false;
    ++ia;
    ++ib;
  }
  for (; ia < a.records.size(); ++ia)
    if (ent_index(a.records[ia].entity) <= limit_entities) return false;
  for (; ib < b.records.size(); ++ib)
    if (ent_index(b.records[ib].entity) <= limit_entities) return false;
  return true;
}

}  // namespace

TEST_CASE("discrete survival from per-period hazards") {
  {
    std::vector<double> lam{0.5};
    auto s = discrete_survival(lam);
    REQUIRE(s.size() == 2);
    CHECK(s[0] == 1.0);
    CHECK(s[1] == 0.5);
  }
  {
    std::vector<double> lam{0.2, 0.5};
    auto s = discrete_survival(lam);
    REQUIRE(s.size() == 3);
    CHECK(s[0] == 1.0);
    CHECK(rel_err(s[1], 0.8) < 1e-15);
    CHECK(rel_err(s[2], 0.4) < 1e-15);
  }
  {
    std::vector<double> lam{0.0, 1.0, 0.3};
    auto s = discrete_survival(lam);
    REQUIRE(s.size() == 4);
    CHECK(s[1] == 1.0);
    CHECK(s[2] == 0.0);
    CHECK(s[3] == 0.0);
  }
}

TEST_CASE("hazards outside the unit interval are rejected") {
  std::vector<double> hi{0.2, 1.2};
  std::vector<double> lo{-0.1};
  CHECK_THROWS_AS(discrete_survival(hi), std::invalid_argument);
  CHECK_THROWS_AS(discrete_survival(lo), std::invalid_argument);
}

TEST_CASE("constant-hazard generator matches the binomial law") {
  // With all coefficients zero and psi = log(-log(0.5)), every period is a
  // fair coin: P(fail at 1) = 1/2, P(fail at 2) = 1/4, P(survive) = 1/4.
  DgpConfig cfg;
  cfg.n_entities = 10000;
  cfg.t_max = 2;
  cfg.seed = 424242;
  cfg.pi_exog = {{0.0}};
  cfg.pi_inst = {{0.0}};
  cfg.psi.assign(2, std::log(-std::log(0.5)));
  cfg.beta1 = {0.0};
  cfg.beta2 = {0.0};
  cfg.rho = 0.0;
  PanelDataset d = generate_panel(cfg);
  EstimationFrame f = build_frame(d);

  std::size_t fail1 = 0, fail2 = 0, censor = 0;
  for (std::size_t i = 0; i < f.n_entities(); ++i) {
    if (f.delta[i] == 1 && f.final_period[i] == 1) ++fail1;
    else if (f.delta[i] == 1 && f.final_period[i] == 2) ++fail2;
    else ++censor;
  }
  const double n = 10000.0;
  // 4-sigma binomial bands.
  CHECK(std::abs(fail1 / n - 0.5) < 4.0 * std::sqrt(0.25 / n));
  CHECK(std::abs(fail2 / n - 0.25) < 4.0 * std::sqrt(0.1875 / n));
  CHECK(std::abs(censor / n - 0.25) < 4.0 * std::sqrt(0.1875 / n));
}

TEST_CASE("generation is deterministic in the seed") {
  DgpConfig cfg = small_config(31);
  PanelDataset a = generate_panel(cfg);
  PanelDataset b = generate_panel(cfg);
  REQUIRE(a.n_rows() == b.n_rows());
  CHECK(records_equal(a, b, cfg.n_entities));

  PanelDataset c = generate_panel(cfg, 3);
  PanelDataset d = generate_panel(cfg, 3);
  CHECK(records_equal(c, d, cfg.n_entities));
  CHECK(!records_equal(a, c, cfg.n_entities));
}

TEST_CASE("entity streams do not depend on the panel size") {
  DgpConfig big = small_config(77);
  DgpConfig small = big;
  small.n_entities = 50;
  PanelDataset a = generate_panel(big);
  PanelDataset b = generate_panel(small);
  // Entities 1..50 must be byte-for-byte identical in both panels.
  CHECK(records_equal(a, b, 50));
}

TEST_CASE("administrative censoring caps every entity at t_max") {
  DgpConfig cfg = small_config(55);
  EstimationFrame f = build_frame(generate_panel(cfg));
  for (std::size_t i = 0; i < f.n_entities(); ++i) {
    CHECK(f.final_period[i] <= cfg.t_max);
    if (f.delta[i] == 0) CHECK(f.final_period[i] == cfg.t_max);
  }
}

TEST_CASE("random censoring produces early censored spells") {
  DgpConfig cfg = small_config(56);
  cfg.censoring = CensoringRule::random_uniform;
  EstimationFrame f = build_frame(generate_panel(cfg));
  std::size_t early_censored = 0;
  for (std::size_t i = 0; i < f.n_entities(); ++i) {
    CHECK(f.final_period[i] <= cfg.t_max);
    if (f.delta[i] == 0 && f.final_period[i] < cfg.t_max) ++early_censored;
  }
  CHECK(early_censored > 0);
}

TEST_CASE("grouped-time likelihood equals the row-wise likelihood") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    DgpConfig cfg = small_config(seed);
    EstimationFrame f = build_frame(generate_panel(cfg));
    // Arbitrary deterministic linear index over the rows.
    std::vector<double> eta(f.rows());
    for (std::size_t r = 0; r < f.rows(); ++r)
      eta[r] = -1.3 + 0.3 * f.exog(r, 0) + 0.5 * f.x_endog(r, 0) -
               0.1 * static_cast<double>(f.row_period[r]);
    double grouped = grouped_time_loglik(f, eta);
    double rowwise = 0.0;
    for (std::size_t r = 0; r < f.rows(); ++r)
      rowwise += cloglog_loglik_term(f.y[r], eta[r]);
    CHECK(rel_err(grouped, rowwise) < 1e-10);
  }
}

TEST_CASE("dgp validation rejects malformed settings") {
  DgpConfig ok = small_config(1);
  validate_dgp(ok);

  DgpConfig bad = ok;
  bad.rho = 1.5;
  CHECK_THROWS_AS(validate_dgp(bad), UsageError);
  bad = ok;
  bad.sigma_v = 0.0;
  CHECK_THROWS_AS(validate_dgp(bad), UsageError);
  bad = ok;
  bad.psi.pop_back();
  CHECK_THROWS_AS(validate_dgp(bad), UsageError);
  bad = ok;
  bad.beta1 = {0.5, 0.2};
  CHECK_THROWS_AS(validate_dgp(bad), UsageError);
  bad = ok;
  bad.pi_inst = {{1.0, 0.5}};
  CHECK_THROWS_AS(validate_dgp(bad), UsageError);
  bad = ok;
  bad.beta3_true = {0.6};  // cf_true has 2 terms per residual
  CHECK_THROWS_AS(validate_dgp(bad), UsageError);
  bad = ok;
  bad.n_entities = 0;
  CHECK_THROWS_AS(validate_dgp(bad), UsageError);
}

TEST_CASE("true polynomial coefficients follow the dependence setting") {
  DgpConfig cfg = small_config(1);
  cfg.rho = 0.6;
  auto b3 = effective_beta3(cfg);
  REQUIRE(b3.size() == 2);  // order-2 separate, one residual
  CHECK(rel_err(b3[0], 0.6) < 1e-15);
  CHECK(rel_err(b3[1], 0.3) < 1e-15);

  cfg.beta3_true = {0.9, -0.2};
  b3 = effective_beta3(cfg);
  CHECK(b3[0] == 0.9);
  CHECK(b3[1] == -0.2);

  cfg.dependence = DependenceKind::gaussian_copula;
  CHECK(effective_beta3(cfg).empty());
}

TEST_CASE("true values name every reportable coefficient") {
  DgpConfig cfg = small_config(1);
  auto tv = true_values(cfg);
  CHECK(tv.at("psi_t1") == -1.5);
  CHECK(tv.at("psi_t4") == -1.5);
  CHECK(tv.at("w1") == 0.5);
  CHECK(tv.at("x1") == 1.0);
  CHECK(rel_err(tv.at("cf_v1"), 0.6) < 1e-15);
  CHECK(rel_err(tv.at("cf_v1^2"), 0.3) < 1e-15);
  CHECK(tv.at("pi[x1]:z1") == 1.0);
  CHECK(tv.at("pi[x1]:w1") == 0.5);
  CHECK(tv.at("pi[x1]:d_t1") == 0.0);

  cfg.dependence = DependenceKind::gaussian_copula;
  tv = true_values(cfg);
  CHECK(tv.find("cf_v1") == tv.end());
}

TEST_CASE("config json round-trips") {
  DgpConfig cfg = small_config(88);
  cfg.transforms = {"x1", "x1^2"};
  cfg.beta2 = {1.0, -0.3};
  cfg.censoring = CensoringRule::random_uniform;
  cfg.dependence = DependenceKind::gaussian_copula;
  cfg.rho = 0.4;
  DgpConfig back = parse_dgp_config(dgp_config_json(cfg));
  CHECK(back.n_entities == cfg.n_entities);
  CHECK(back.t_max == cfg.t_max);
  CHECK(back.seed == cfg.seed);
  CHECK(back.pi_exog == cfg.pi_exog);
  CHECK(back.pi_inst == cfg.pi_inst);
  CHECK(back.psi == cfg.psi);
  CHECK(back.beta1 == cfg.beta1);
  CHECK(back.beta2 == cfg.beta2);
  CHECK(back.transforms == cfg.transforms);
  CHECK(back.rho == cfg.rho);
  CHECK(back.censoring == cfg.censoring);
  CHECK(back.dependence == cfg.dependence);
  // The regenerated panel must be identical.
  CHECK(records_equal(generate_panel(cfg), generate_panel(back),
                      cfg.n_entities));
}

TEST_CASE("config parser rejects unknown keys and broadcasts psi") {
  CHECK_THROWS_AS(parse_dgp_config("{\"n_entitees\": 10}"), UsageError);
  CHECK_THROWS_AS(parse_dgp_config("not json"), UsageError);

  DgpConfig cfg = parse_dgp_config(
      "{\"n_entities\": 10, \"t_max\": 3, \"psi\": -1.25}");
  REQUIRE(cfg.psi.size() == 3);
  CHECK(cfg.psi[0] == -1.25);
  CHECK(cfg.psi[2] == -1.25);
}

TEST_CASE("monte carlo smoke run") {
  DgpConfig cfg = small_config(2025);
  std::vector<EstimatorConfig> est(2);
  est[0].name = "cf";
  est[0].options.kind = EstimatorKind::control_function;
  est[1].name = "naive";
  est[1].options.kind = EstimatorKind::naive;
  McConfig mc;
  mc.n_reps = 5;
  McReport rep = run_monte_carlo(cfg, est, mc);
  CHECK(rep.n_reps == 5);
  REQUIRE(rep.summaries.size() == 2);

  const McSummary& s = rep.summary("cf");
  CHECK(s.n_completed == 5);
  CHECK(s.failures == 0);
  CHECK(s.variances_defined);
  REQUIRE(s.replications.size() == 5);
  CHECK(s.estimates.rows() == 5);
  CHECK(s.estimates.cols() == s.param_names.size());

  std::size_t ix = s.index_of("x1");
  REQUIRE(ix != static_cast<std::size_t>(-1));
  CHECK(std::isfinite(s.mean[ix]));
  CHECK(std::isfinite(s.bias[ix]));
  CHECK(std::isfinite(s.mc_se[ix]));
  CHECK(std::isfinite(s.empirical_var[ix]));
  CHECK(std::isfinite(s.vcov_mean[ix]));
  CHECK(s.coverage95[ix] >= 0.0);
  CHECK(s.coverage95[ix] <= 1.0);
  CHECK(rel_err(s.truth[ix], 1.0) < 1e-15);
  CHECK(s.index_of("no_such_param") == static_cast<std::size_t>(-1));

  // The naive estimator reports second-stage-only standard errors too.
  const McSummary& nv = rep.summary("naive");
  CHECK(nv.n_completed == 5);
  CHECK_THROWS_AS(rep.summary("bogus"), std::invalid_argument);
}

TEST_CASE("monte carlo with a single replication defines no spread") {
  DgpConfig cfg = small_config(99);
  std::vector<EstimatorConfig> est(1);
  est[0].name = "naive";
  est[0].options.kind = EstimatorKind::naive;
  McConfig mc;
  mc.n_reps = 1;
  McReport rep = run_monte_carlo(cfg, est, mc);
  const McSummary& s = rep.summaries[0];
  CHECK(s.n_completed == 1);
  CHECK(!s.variances_defined);
  std::size_t ix = s.index_of("x1");
  REQUIRE(ix != static_cast<std::size_t>(-1));
  CHECK(std::isnan(s.empirical_var[ix]));
}

TEST_CASE("excess failures abort the harness loudly") {
  DgpConfig cfg = small_config(123);
  std::vector<EstimatorConfig> est(1);
  est[0].name = "cf";
  est[0].options.kind = EstimatorKind::control_function;
  est[0].options.cloglog.max_iterations = 1;  // guarantees non-convergence
  McConfig mc;
  mc.n_reps = 4;
  try {
    run_monte_carlo(cfg, est, mc);
    FAIL("expected EstimationError");
  } catch (const EstimationError& e) {
    std::string msg = e.what();
    CHECK(msg.find("cf") != std::string::npos);
    CHECK(msg.find("failed") != std::string::npos);
  }
}

TEST_CASE("report writers emit json and csv") {
  namespace fs = std::filesystem;
  DgpConfig cfg = small_config(321);
  std::vector<EstimatorConfig> est(1);
  est[0].name = "cf";
  est[0].options.kind = EstimatorKind::control_function;
  McConfig mc;
  mc.n_reps = 3;
  McReport rep = run_monte_carlo(cfg, est, mc);

  fs::path dir = fs::temp_directory_path() / "ivhazard_test_writers";
  fs::create_directories(dir);
  fs::path jpath = dir / "mc.json";
  fs::path cpath = dir / "est.csv";
  rep.write_json(jpath.string());
  rep.write_estimates_csv(cpath.string(), "cf");

  std::ifstream jf(jpath);
  std::string jtext((std::istreambuf_iterator<char>(jf)),
                    std::istreambuf_iterator<char>());
  CHECK(jtext.find("\"estimator\"") != std::string::npos);
  CHECK(jtext.find("\"cf\"") != std::string::npos);
  CHECK(jtext.find("x1") != std::string::npos);

  std::ifstream cf(cpath);
  std::string header;
  std::getline(cf, header);
  CHECK(header.rfind("replication", 0) == 0);
  CHECK(header.find("x1") != std::string::npos);
  std::size_t lines = 0;
  std::string line;
  while (std::getline(cf, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 3);
  fs::remove_all(dir);
}
