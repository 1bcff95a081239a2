#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ivhazard/estimator.hpp"
#include "ivhazard/panel.hpp"

namespace ivhazard {

// How the first-stage error enters the hazard.  exact_polynomial puts a
// polynomial in v directly into the latent index with an independent Gumbel
// shock, so the residual-polynomial estimator is exactly correctly
// specified.  gaussian_copula instead correlates the Gumbel shock with v's
// Gaussian driver, a dependence a low-order polynomial approximates but does
// not nail.
enum class DependenceKind { exact_polynomial, gaussian_copula };

enum class CensoringRule { administrative, random_uniform };

struct Dist {
  enum class Kind { normal, uniform, bernoulli };
  Kind kind = Kind::normal;
  double mean = 0.0, sd = 1.0;  // normal
  double lo = 0.0, hi = 1.0;    // uniform
  double p = 0.5;               // bernoulli

  double draw(class CounterRng& rng) const;
};

// One simulated panel: per entity-period, fresh instruments z, exogenous
// covariates w, first-stage error v, regressors x = pi_z'z + pi_w'w + v, and
// latent failure  y = 1(psi_t + w'beta1 + f(x)'beta2 + c(v) + e > 0)  with e
// standard Gumbel, so the per-period hazard is the cloglog probability of
// the linear index by construction.
struct DgpConfig {
  std::size_t n_entities = 100;
  int t_max = 8;
  std::uint64_t seed = 1;

  std::size_t n_exog = 1;
  std::size_t n_instruments = 1;
  std::size_t n_endog = 1;

  // First stage: per endogenous regressor j, coefficient rows over the
  // exogenous covariates and the excluded instruments.
  std::vector<std::vector<double>> pi_exog;  // n_endog x n_exog
  std::vector<std::vector<double>> pi_inst;  // n_endog x n_instruments
  double sigma_v = 1.0;

  std::vector<double> psi;    // period effects, length t_max
  std::vector<double> beta1;  // exogenous coefficients, length n_exog
  std::vector<double> beta2;  // structural coefficients, one per transform

  // Second-stage regressor expressions over x1..xK; empty = identity.
  std::vector<std::string> transforms;

  DependenceKind dependence = DependenceKind::exact_polynomial;
  double rho = 0.0;  // dependence strength, in [-1, 1]

  // Shape of the true c(v) under exact_polynomial.  beta3_true aligns with
  // cf_terms(n_endog, cf_true); empty means rho * (v + 0.5 v^2) per
  // residual with cf_true = {2, separate}.
  ControlFunctionSpec cf_true{2, CfForm::separate};
  std::vector<double> beta3_true;

  CensoringRule censoring = CensoringRule::administrative;
  Dist instrument_dist;
  Dist exog_dist;
};

void validate_dgp(const DgpConfig& cfg);

// The c(v) coefficients actually used: beta3_true if given, otherwise the
// rho-scaled default.  Empty under gaussian_copula.
std::vector<double> effective_beta3(const DgpConfig& cfg);

DgpConfig load_dgp_config(const std::string& path);
DgpConfig parse_dgp_config(const std::string& json_text);
std::string dgp_config_json(const DgpConfig& cfg);

// Survival curve from per-period hazards: S(0) = 1 prepended, then the
// cumulative product of (1 - lambda).
std::vector<double> discrete_survival(std::span<const double> lambda);

// Censored-product log likelihood sum_i [delta_i log f(s_i) +
// (1-delta_i) log S(s_i)] with f(s) = lambda_s S(s-1), hazards
// lambda = cloglog_prob(eta).  Deliberately routed through
// discrete_survival so it is an independent check of the row-wise
// Bernoulli log likelihood.
double grouped_time_loglik(const EstimationFrame& frame,
                           std::span<const double> eta);

PanelDataset generate_panel(const DgpConfig& cfg);
PanelDataset generate_panel(const DgpConfig& cfg, std::uint32_t replication);

// True parameter value per reportable coefficient name ("psi_t3", "w1",
// "x1", "cf_v1", "pi[x1]:z1", ...).  Names with no defined truth (copula
// c(v) terms) are absent.
std::map<std::string, double> true_values(const DgpConfig& cfg);

struct EstimatorConfig {
  std::string name;  // report label, e.g. "cf", "naive", "2sps"
  EstimateOptions options;
};

struct McConfig {
  std::size_t n_reps = 100;
  std::size_t threads = 1;
  double max_failure_rate = 0.2;  // harness error above this
};

// Per-estimator Monte Carlo summary.  Matrices have one row per
// replication; entries are NaN for failed replications and for parameters
// an individual replication did not report (columns are the union of names
// seen across replications, aligned by name).
struct McSummary {
  std::string estimator;
  std::vector<std::string> param_names;
  std::vector<std::uint32_t> replications;  // completed, ascending
  Matrix estimates;
  Matrix variances;        // sandwich diagonal
  Matrix naive_variances;  // second-stage-only diagonal; may be 0 x 0
  std::vector<double> truth;  // NaN when undefined

  // All computed over completed replications.
  std::vector<double> mean;
  std::vector<double> bias;           // NaN when truth undefined
  std::vector<double> mc_se;          // SE of the mean estimate
  std::vector<double> empirical_var;  // NaN when fewer than 2 completions
  std::vector<double> vcov_mean;      // mean sandwich variance
  std::vector<double> coverage95;     // CI-covers-truth rate
  bool variances_defined = false;     // at least 2 completed replications

  std::size_t n_completed = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;  // first few, deduplicated

  std::size_t index_of(const std::string& name) const;  // npos if absent
};

struct McReport {
  DgpConfig config;
  std::size_t n_reps = 0;
  std::vector<McSummary> summaries;

  const McSummary& summary(const std::string& estimator) const;
  std::string to_json() const;
  void write_json(const std::string& path) const;
  // One CSV per estimator: replication column plus per-parameter estimate
  // and std.error columns.
  void write_estimates_csv(const std::string& path,
                           const std::string& estimator) const;
};

McReport run_monte_carlo(const DgpConfig& cfg,
                         const std::vector<EstimatorConfig>& estimators,
                         const McConfig& mc = {});

}  // namespace ivhazard
