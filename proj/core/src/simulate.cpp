#include "ivhazard/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "ivhazard/cloglog.hpp"
#include "ivhazard/rng.hpp"
#include "ivhazard/stats.hpp"
#include "ivhazard/transform.hpp"

namespace ivhazard {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

}  // namespace

double Dist::draw(CounterRng& rng) const {
  switch (kind) {
    case Kind::normal:
      return mean + sd * rng.normal();
    case Kind::uniform:
      return lo + (hi - lo) * rng.uniform();
    case Kind::bernoulli:
      return rng.uniform() < p ? 1.0 : 0.0;
  }
  return 0.0;
}

void validate_dgp(const DgpConfig& cfg) {
  if (cfg.n_entities < 1) throw UsageError("dgp: n_entities must be >= 1");
  if (cfg.t_max < 1) throw UsageError("dgp: t_max must be >= 1");
  if (!(cfg.rho >= -1.0 && cfg.rho <= 1.0))
    throw UsageError("dgp: rho must lie in [-1, 1]");
  if (!(cfg.sigma_v > 0.0) || !std::isfinite(cfg.sigma_v))
    throw UsageError("dgp: sigma_v must be positive");
  if (cfg.n_endog < 1) throw UsageError("dgp: n_endog must be >= 1");
  if (cfg.psi.size() != static_cast<std::size_t>(cfg.t_max))
    throw UsageError("dgp: psi must have one entry per period (" +
                     std::to_string(cfg.t_max) + ")");
  if (cfg.beta1.size() != cfg.n_exog)
    throw UsageError("dgp: beta1 must have one entry per exogenous covariate");
  const std::size_t n_struct =
      cfg.transforms.empty() ? cfg.n_endog : cfg.transforms.size();
  if (cfg.beta2.size() != n_struct)
    throw UsageError("dgp: beta2 must have one entry per structural "
                     "regressor (" + std::to_string(n_struct) + ")");
  if (cfg.pi_exog.size() != cfg.n_endog || cfg.pi_inst.size() != cfg.n_endog)
    throw UsageError("dgp: pi_exog and pi_inst need one row per endogenous "
                     "regressor");
  for (const auto& row : cfg.pi_exog)
    if (row.size() != cfg.n_exog)
      throw UsageError("dgp: pi_exog row width must equal n_exog");
  for (const auto& row : cfg.pi_inst)
    if (row.size() != cfg.n_instruments)
      throw UsageError("dgp: pi_inst row width must equal n_instruments");
  if (!cfg.beta3_true.empty()) {
    const std::size_t want = cf_terms(cfg.n_endog, cfg.cf_true).size();
    if (cfg.beta3_true.size() != want)
      throw UsageError("dgp: beta3_true must align with the cf_true term "
                       "layout (" + std::to_string(want) + " terms)");
  }
}

std::vector<double> effective_beta3(const DgpConfig& cfg) {
  if (cfg.dependence == DependenceKind::gaussian_copula) return {};
  if (!cfg.beta3_true.empty()) return cfg.beta3_true;
  // Default: rho * (v + 0.5 v^2) per residual.
  ControlFunctionSpec def{2, CfForm::separate};
  std::vector<double> out;
  if (cfg.cf_true.order != def.order || cfg.cf_true.form != def.form) {
    out.assign(cf_terms(cfg.n_endog, cfg.cf_true).size(), 0.0);
    return out;
  }
  for (std::size_t j = 0; j < cfg.n_endog; ++j) {
    out.push_back(cfg.rho);
    out.push_back(0.5 * cfg.rho);
  }
  return out;
}

namespace {

using nlohmann::json;

Dist parse_dist(const json& j, const std::string& where) {
  Dist d;
  if (!j.is_object())
    throw UsageError("dgp config: " + where + " must be an object");
  std::string kind = j.value("kind", "normal");
  if (kind == "normal") {
    d.kind = Dist::Kind::normal;
    d.mean = j.value("mean", 0.0);
    d.sd = j.value("sd", 1.0);
  } else if (kind == "uniform") {
    d.kind = Dist::Kind::uniform;
    d.lo = j.value("lo", 0.0);
    d.hi = j.value("hi", 1.0);
  } else if (kind == "bernoulli") {
    d.kind = Dist::Kind::bernoulli;
    d.p = j.value("p", 0.5);
  } else {
    throw UsageError("dgp config: unknown distribution kind '" + kind +
                     "' in " + where);
  }
  return d;
}

json dist_json(const Dist& d) {
  switch (d.kind) {
    case Dist::Kind::normal:
      return {{"kind", "normal"}, {"mean", d.mean}, {"sd", d.sd}};
    case Dist::Kind::uniform:
      return {{"kind", "uniform"}, {"lo", d.lo}, {"hi", d.hi}};
    case Dist::Kind::bernoulli:
      return {{"kind", "bernoulli"}, {"p", d.p}};
  }
  return {};
}

std::vector<std::vector<double>> parse_coef_rows(const json& j,
                                                 const std::string& where) {
  std::vector<std::vector<double>> out;
  if (!j.is_array())
    throw UsageError("dgp config: " + where + " must be an array of arrays");
  for (const auto& row : j) {
    if (!row.is_array())
      throw UsageError("dgp config: " + where + " must be an array of arrays");
    out.push_back(row.get<std::vector<double>>());
  }
  return out;
}

}  // namespace

DgpConfig parse_dgp_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("dgp config: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw UsageError("dgp config: top level must be an object");

  static const char* known[] = {
      "n_entities", "t_max",      "seed",       "n_exog",    "n_instruments",
      "n_endog",    "pi_exog",    "pi_inst",    "sigma_v",   "psi",
      "beta1",      "beta2",      "transforms", "dependence", "rho",
      "cf_order",   "cf_form",    "beta3_true", "censoring",
      "instrument_dist", "exog_dist"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) throw UsageError("dgp config: unknown key '" + it.key() + "'");
  }

  DgpConfig cfg;
  cfg.n_entities = j.value("n_entities", cfg.n_entities);
  cfg.t_max = j.value("t_max", cfg.t_max);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.n_exog = j.value("n_exog", cfg.n_exog);
  cfg.n_instruments = j.value("n_instruments", cfg.n_instruments);
  cfg.n_endog = j.value("n_endog", cfg.n_endog);
  cfg.sigma_v = j.value("sigma_v", cfg.sigma_v);
  cfg.rho = j.value("rho", cfg.rho);

  if (j.contains("pi_exog")) cfg.pi_exog = parse_coef_rows(j["pi_exog"], "pi_exog");
  else cfg.pi_exog.assign(cfg.n_endog, std::vector<double>(cfg.n_exog, 0.5));
  if (j.contains("pi_inst")) cfg.pi_inst = parse_coef_rows(j["pi_inst"], "pi_inst");
  else cfg.pi_inst.assign(cfg.n_endog, std::vector<double>(cfg.n_instruments, 1.0));

  if (j.contains("psi")) {
    if (j["psi"].is_number())
      cfg.psi.assign(static_cast<std::size_t>(cfg.t_max),
                     j["psi"].get<double>());
    else
      cfg.psi = j["psi"].get<std::vector<double>>();
  } else {
    cfg.psi.assign(static_cast<std::size_t>(cfg.t_max), -1.8);
  }
  if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<std::vector<double>>();
  else cfg.beta1.assign(cfg.n_exog, 0.5);
  if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<std::vector<double>>();
  else {
    const std::size_t n_struct = j.contains("transforms") &&
                                         !j["transforms"].empty()
                                     ? j["transforms"].size()
                                     : cfg.n_endog;
    cfg.beta2.assign(n_struct, 1.0);
  }
  if (j.contains("transforms"))
    cfg.transforms = j["transforms"].get<std::vector<std::string>>();

  std::string dep = j.value("dependence", "exact_polynomial");
  if (dep == "exact_polynomial")
    cfg.dependence = DependenceKind::exact_polynomial;
  else if (dep == "gaussian_copula")
    cfg.dependence = DependenceKind::gaussian_copula;
  else
    throw UsageError("dgp config: unknown dependence '" + dep + "'");

  cfg.cf_true.order = j.value("cf_order", cfg.cf_true.order);
  std::string form = j.value("cf_form", "separate");
  if (form == "separate") cfg.cf_true.form = CfForm::separate;
  else if (form == "full") cfg.cf_true.form = CfForm::full;
  else throw UsageError("dgp config: unknown cf_form '" + form + "'");
  if (j.contains("beta3_true"))
    cfg.beta3_true = j["beta3_true"].get<std::vector<double>>();

  std::string cens = j.value("censoring", "administrative");
  if (cens == "administrative") cfg.censoring = CensoringRule::administrative;
  else if (cens == "random_uniform")
    cfg.censoring = CensoringRule::random_uniform;
  else throw UsageError("dgp config: unknown censoring rule '" + cens + "'");

  if (j.contains("instrument_dist"))
    cfg.instrument_dist = parse_dist(j["instrument_dist"], "instrument_dist");
  if (j.contains("exog_dist"))
    cfg.exog_dist = parse_dist(j["exog_dist"], "exog_dist");

  validate_dgp(cfg);
  return cfg;
}

DgpConfig load_dgp_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dgp config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_dgp_config(buf.str());
}

std::string dgp_config_json(const DgpConfig& cfg) {
  json j;
  j["n_entities"] = cfg.n_entities;
  j["t_max"] = cfg.t_max;
  j["seed"] = cfg.seed;
  j["n_exog"] = cfg.n_exog;
  j["n_instruments"] = cfg.n_instruments;
  j["n_endog"] = cfg.n_endog;
  j["pi_exog"] = cfg.pi_exog;
  j["pi_inst"] = cfg.pi_inst;
  j["sigma_v"] = cfg.sigma_v;
  j["psi"] = cfg.psi;
  j["beta1"] = cfg.beta1;
  j["beta2"] = cfg.beta2;
  j["transforms"] = cfg.transforms;
  j["dependence"] = cfg.dependence == DependenceKind::exact_polynomial
                        ? "exact_polynomial"
                        : "gaussian_copula";
  j["rho"] = cfg.rho;
  j["cf_order"] = cfg.cf_true.order;
  j["cf_form"] = cfg.cf_true.form == CfForm::separate ? "separate" : "full";
  j["beta3_true"] = cfg.beta3_true;
  j["censoring"] = cfg.censoring == CensoringRule::administrative
                       ? "administrative"
                       : "random_uniform";
  j["instrument_dist"] = dist_json(cfg.instrument_dist);
  j["exog_dist"] = dist_json(cfg.exog_dist);
  return j.dump(2);
}

std::vector<double> discrete_survival(std::span<const double> lambda) {
  std::vector<double> s(lambda.size() + 1);
  s[0] = 1.0;
  for (std::size_t t = 0; t < lambda.size(); ++t) {
    if (!(lambda[t] >= 0.0 && lambda[t] <= 1.0))
      throw std::invalid_argument(
          "discrete_survival: hazard " + std::to_string(lambda[t]) +
          " at period " + std::to_string(t + 1) + " is outside [0, 1]");
    s[t + 1] = s[t] * (1.0 - lambda[t]);
  }
  return s;
}

double grouped_time_loglik(const EstimationFrame& frame,
                           std::span<const double> eta) {
  if (eta.size() != frame.rows())
    throw std::invalid_argument("grouped_time_loglik: eta length mismatch");
  double ll = 0.0;
  for (std::size_t i = 0; i < frame.n_entities(); ++i) {
    const std::size_t b = frame.entity_begin[i];
    const std::size_t e = frame.entity_begin[i + 1];
    std::vector<double> lambda(e - b);
    for (std::size_t r = b; r < e; ++r) lambda[r - b] = cloglog_prob(eta[r]);
    std::vector<double> s = discrete_survival(lambda);
    if (frame.delta[i])
      ll += std::log(lambda.back() * s[lambda.size() - 1]);
    else
      ll += std::log(s.back());
  }
  return ll;
}

PanelDataset generate_panel(const DgpConfig& cfg) {
  return generate_panel(cfg, 0);
}

PanelDataset generate_panel(const DgpConfig& cfg, std::uint32_t replication) {
  validate_dgp(cfg);
  const std::size_t ke = cfg.n_exog;
  const std::size_t km = cfg.n_instruments;
  const std::size_t kappa = cfg.n_endog;

  std::vector<RegressorTransform> transforms;
  {
    std::vector<std::string> endog_names;
    for (std::size_t j = 0; j < kappa; ++j)
      endog_names.push_back("x" + std::to_string(j + 1));
    if (cfg.transforms.empty()) {
      transforms = identity_transforms(endog_names);
    } else {
      for (const auto& expr : cfg.transforms)
        transforms.push_back(parse_transform(expr, endog_names));
    }
  }
  const std::vector<double> beta3 = effective_beta3(cfg);
  const std::vector<CfTerm> cf = cf_terms(kappa, cfg.cf_true);
  const double rho_c = cfg.rho;
  const double rho_s = std::sqrt(std::max(0.0, 1.0 - rho_c * rho_c));
  const bool copula = cfg.dependence == DependenceKind::gaussian_copula;

  PanelDataset data;
  for (std::size_t j = 0; j < kappa; ++j)
    data.endog_names.push_back("x" + std::to_string(j + 1));
  for (std::size_t k = 0; k < ke; ++k)
    data.exog_names.push_back("w" + std::to_string(k + 1));
  for (std::size_t m = 0; m < km; ++m)
    data.instrument_names.push_back("z" + std::to_string(m + 1));

  std::vector<double> z(km), w(ke), v(kappa), x(kappa), fx(transforms.size());
  for (std::size_t i = 0; i < cfg.n_entities; ++i) {
    CounterRng rng(cfg.seed, replication, static_cast<std::uint32_t>(i));
    int censor_at = cfg.t_max;
    if (cfg.censoring == CensoringRule::random_uniform) {
      censor_at = 1 + static_cast<int>(rng.uniform() * cfg.t_max);
      censor_at = std::min(censor_at, cfg.t_max);
    }
    for (int t = 1; t <= censor_at; ++t) {
      for (std::size_t m = 0; m < km; ++m) z[m] = cfg.instrument_dist.draw(rng);
      for (std::size_t k = 0; k < ke; ++k) w[k] = cfg.exog_dist.draw(rng);
      double n1_first = 0.0;
      for (std::size_t j = 0; j < kappa; ++j) {
        double n1 = rng.normal();
        if (j == 0) n1_first = n1;
        v[j] = cfg.sigma_v * n1;
      }
      for (std::size_t j = 0; j < kappa; ++j) {
        double s = v[j];
        for (std::size_t k = 0; k < ke; ++k) s += cfg.pi_exog[j][k] * w[k];
        for (std::size_t m = 0; m < km; ++m) s += cfg.pi_inst[j][m] * z[m];
        x[j] = s;
      }
      double e;
      if (copula) {
        double n2 = rng.normal();
        e = -std::log(-std::log(normal_cdf(rho_c * n1_first + rho_s * n2)));
      } else {
        e = rng.gumbel();
      }
      double eta = cfg.psi[static_cast<std::size_t>(t - 1)];
      for (std::size_t k = 0; k < ke; ++k) eta += cfg.beta1[k] * w[k];
      for (std::size_t f = 0; f < transforms.size(); ++f)
        eta += cfg.beta2[f] * transforms[f].eval(x);
      for (std::size_t a = 0; a < beta3.size(); ++a)
        eta += beta3[a] * cf_monomial(v, cf[a]);

      PanelRecord rec;
      rec.entity = std::to_string(i + 1);
      rec.time = t;
      rec.fail = (eta + e > 0.0) ? 1 : 0;
      rec.endog.assign(x.begin(), x.end());
      rec.exog.assign(w.begin(), w.end());
      rec.instruments.assign(z.begin(), z.end());
      data.records.push_back(std::move(rec));
      if (data.records.back().fail) break;
    }
  }
  validate_panel(data);
  return data;
}

std::map<std::string, double> true_values(const DgpConfig& cfg) {
  std::map<std::string, double> truth;
  for (int t = 1; t <= cfg.t_max; ++t)
    truth["psi_t" + std::to_string(t)] =
        cfg.psi[static_cast<std::size_t>(t - 1)];
  for (std::size_t k = 0; k < cfg.n_exog; ++k)
    truth["w" + std::to_string(k + 1)] = cfg.beta1[k];
  if (cfg.transforms.empty()) {
    for (std::size_t j = 0; j < cfg.n_endog; ++j)
      truth["x" + std::to_string(j + 1)] = cfg.beta2[j];
  } else {
    for (std::size_t f = 0; f < cfg.transforms.size(); ++f)
      truth[cfg.transforms[f]] = cfg.beta2[f];
  }
  if (cfg.dependence == DependenceKind::exact_polynomial) {
    const std::vector<double> beta3 = effective_beta3(cfg);
    const std::vector<CfTerm> terms = cf_terms(cfg.n_endog, cfg.cf_true);
    for (std::size_t a = 0; a < terms.size(); ++a)
      truth[terms[a].label()] = beta3[a];
  }
  for (std::size_t j = 0; j < cfg.n_endog; ++j) {
    const std::string eq = "pi[x" + std::to_string(j + 1) + "]:";
    for (int t = 1; t <= cfg.t_max; ++t)
      truth[eq + "d_t" + std::to_string(t)] = 0.0;
    for (std::size_t k = 0; k < cfg.n_exog; ++k)
      truth[eq + "w" + std::to_string(k + 1)] = cfg.pi_exog[j][k];
    for (std::size_t m = 0; m < cfg.n_instruments; ++m)
      truth[eq + "z" + std::to_string(m + 1)] = cfg.pi_inst[j][m];
  }
  return truth;
}

namespace {

struct RepParam {
  std::string name;
  double estimate = kNan;
  double variance = kNan;
  double naive_variance = kNan;
  double ci_low = kNan;
  double ci_high = kNan;
};

struct RepResult {
  bool attempted = false;
  bool completed = false;
  std::string error;
  std::vector<RepParam> params;
};

RepResult run_one(const PanelDataset& data, const EstimateOptions& options) {
  RepResult out;
  out.attempted = true;
  try {
    EstimateReport rep = estimate(data, options);
    if (!rep.converged) {
      out.error = "not converged: " + rep.convergence_reason;
      return out;
    }
    for (std::size_t c = 0; c < rep.coefficients.size(); ++c) {
      const Coefficient& co = rep.coefficients[c];
      RepParam p;
      p.name = co.name;
      p.estimate = co.estimate;
      p.variance = co.std_error * co.std_error;
      if (c < rep.naive_std_errors.size())
        p.naive_variance = rep.naive_std_errors[c] * rep.naive_std_errors[c];
      p.ci_low = co.ci_low;
      p.ci_high = co.ci_high;
      out.params.push_back(std::move(p));
    }
    for (const auto& eq : rep.first_stage) {
      for (const auto& co : eq.coefficients) {
        RepParam p;
        p.name = "pi[" + eq.name + "]:" + co.name;
        p.estimate = co.estimate;
        p.variance = co.std_error * co.std_error;
        p.ci_low = co.ci_low;
        p.ci_high = co.ci_high;
        out.params.push_back(std::move(p));
      }
    }
    out.completed = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

McSummary summarize(const std::string& name,
                    const std::vector<RepResult>& results,
                    const std::map<std::string, double>& truth) {
  McSummary s;
  s.estimator = name;
  // Union of parameter names in first-seen order across replications.
  for (const auto& r : results) {
    if (!r.completed) continue;
    for (const auto& p : r.params)
      if (std::find(s.param_names.begin(), s.param_names.end(), p.name) ==
          s.param_names.end())
        s.param_names.push_back(p.name);
  }
  for (std::uint32_t r = 0; r < results.size(); ++r)
    if (results[r].completed) s.replications.push_back(r);
  const std::size_t rows = s.replications.size();
  const std::size_t cols = s.param_names.size();
  s.n_completed = rows;
  s.failures = results.size() - rows;
  for (const auto& r : results) {
    if (r.completed || r.error.empty()) continue;
    if (std::find(s.failure_messages.begin(), s.failure_messages.end(),
                  r.error) == s.failure_messages.end() &&
        s.failure_messages.size() < 8)
      s.failure_messages.push_back(r.error);
  }
  s.estimates = Matrix(rows, cols);
  s.variances = Matrix(rows, cols);
  s.naive_variances = Matrix(rows, cols);
  Matrix lo(rows, cols), hi(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) {
      s.estimates(i, j) = kNan;
      s.variances(i, j) = kNan;
      s.naive_variances(i, j) = kNan;
      lo(i, j) = kNan;
      hi(i, j) = kNan;
    }
  for (std::size_t i = 0; i < rows; ++i) {
    const RepResult& r = results[s.replications[i]];
    for (const auto& p : r.params) {
      auto it = std::find(s.param_names.begin(), s.param_names.end(), p.name);
      std::size_t j =
          static_cast<std::size_t>(it - s.param_names.begin());
      s.estimates(i, j) = p.estimate;
      s.variances(i, j) = p.variance;
      s.naive_variances(i, j) = p.naive_variance;
      lo(i, j) = p.ci_low;
      hi(i, j) = p.ci_high;
    }
  }

  s.truth.assign(cols, kNan);
  for (std::size_t j = 0; j < cols; ++j) {
    auto it = truth.find(s.param_names[j]);
    if (it != truth.end()) s.truth[j] = it->second;
  }

  s.mean.assign(cols, kNan);
  s.bias.assign(cols, kNan);
  s.mc_se.assign(cols, kNan);
  s.empirical_var.assign(cols, kNan);
  s.vcov_mean.assign(cols, kNan);
  s.coverage95.assign(cols, kNan);
  s.variances_defined = false;
  for (std::size_t j = 0; j < cols; ++j) {
    std::size_t n = 0, nv = 0, ncov = 0, covered = 0;
    double sum = 0.0, vsum = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
      double est = s.estimates(i, j);
      if (std::isnan(est)) continue;
      ++n;
      sum += est;
      if (!std::isnan(s.variances(i, j))) {
        ++nv;
        vsum += s.variances(i, j);
      }
      if (!std::isnan(s.truth[j]) && !std::isnan(lo(i, j))) {
        ++ncov;
        if (lo(i, j) <= s.truth[j] && s.truth[j] <= hi(i, j)) ++covered;
      }
    }
    if (n == 0) continue;
    double mean = sum / static_cast<double>(n);
    s.mean[j] = mean;
    if (!std::isnan(s.truth[j])) s.bias[j] = mean - s.truth[j];
    if (nv > 0) s.vcov_mean[j] = vsum / static_cast<double>(nv);
    if (n >= 2) {
      double ss = 0.0;
      for (std::size_t i = 0; i < rows; ++i) {
        double est = s.estimates(i, j);
        if (std::isnan(est)) continue;
        ss += (est - mean) * (est - mean);
      }
      s.empirical_var[j] = ss / static_cast<double>(n - 1);
      s.mc_se[j] =
          std::sqrt(s.empirical_var[j] / static_cast<double>(n));
      s.variances_defined = true;
    }
    if (ncov > 0)
      s.coverage95[j] =
          static_cast<double>(covered) / static_cast<double>(ncov);
  }
  return s;
}

}  // namespace

std::size_t McSummary::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < param_names.size(); ++j)
    if (param_names[j] == name) return j;
  return static_cast<std::size_t>(-1);
}

const McSummary& McReport::summary(const std::string& estimator) const {
  for (const auto& s : summaries)
    if (s.estimator == estimator) return s;
  throw std::invalid_argument("no Monte Carlo summary for estimator '" +
                              estimator + "'");
}

McReport run_monte_carlo(const DgpConfig& cfg,
                         const std::vector<EstimatorConfig>& estimators,
                         const McConfig& mc) {
  validate_dgp(cfg);
  if (mc.n_reps < 1) throw UsageError("monte carlo: n_reps must be >= 1");
  if (estimators.empty())
    throw UsageError("monte carlo: at least one estimator is required");

  // results[e][r] for estimator e, replication r.
  std::vector<std::vector<RepResult>> results(
      estimators.size(), std::vector<RepResult>(mc.n_reps));

  auto work = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      PanelDataset data =
          generate_panel(cfg, static_cast<std::uint32_t>(r));
      for (std::size_t e = 0; e < estimators.size(); ++e)
        results[e][r] = run_one(data, estimators[e].options);
    }
  };

  std::size_t n_threads = std::max<std::size_t>(1, mc.threads);
  n_threads = std::min(n_threads, mc.n_reps);
  if (n_threads == 1) {
    work(0, mc.n_reps);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (mc.n_reps + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      std::size_t lo = t * chunk;
      std::size_t hi = std::min(mc.n_reps, lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
  }

  const std::map<std::string, double> truth = true_values(cfg);
  McReport report;
  report.config = cfg;
  report.n_reps = mc.n_reps;
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    McSummary s = summarize(estimators[e].name, results[e], truth);
    double fail_rate = static_cast<double>(s.failures) /
                       static_cast<double>(mc.n_reps);
    if (fail_rate > mc.max_failure_rate) {
      std::string detail = s.failure_messages.empty()
                               ? std::string("no diagnostics recorded")
                               : s.failure_messages.front();
      throw EstimationError(
          "monte carlo: estimator '" + estimators[e].name + "' failed " +
          std::to_string(s.failures) + " of " + std::to_string(mc.n_reps) +
          " replications (first: " + detail + ")");
    }
    report.summaries.push_back(std::move(s));
  }
  return report;
}

std::string McReport::to_json() const {
  json j;
  j["config"] = json::parse(dgp_config_json(config));
  j["n_reps"] = n_reps;
  auto cell = [](double v) -> json {
    if (std::isnan(v)) return nullptr;
    return v;
  };
  for (const auto& s : summaries) {
    json js;
    js["estimator"] = s.estimator;
    js["param_names"] = s.param_names;
    js["replications"] = s.replications;
    js["n_completed"] = s.n_completed;
    js["failures"] = s.failures;
    js["failure_messages"] = s.failure_messages;
    js["variances_defined"] = s.variances_defined;
    auto vec = [&](const std::vector<double>& v) {
      json a = json::array();
      for (double x : v) a.push_back(cell(x));
      return a;
    };
    js["truth"] = vec(s.truth);
    js["mean"] = vec(s.mean);
    js["bias"] = vec(s.bias);
    js["mc_se"] = vec(s.mc_se);
    js["empirical_var"] = vec(s.empirical_var);
    js["vcov_mean"] = vec(s.vcov_mean);
    js["coverage95"] = vec(s.coverage95);
    auto mat = [&](const Matrix& m) {
      json rows = json::array();
      for (std::size_t i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (std::size_t jx = 0; jx < m.cols(); ++jx)
          row.push_back(cell(m(i, jx)));
        rows.push_back(std::move(row));
      }
      return rows;
    };
    js["estimates"] = mat(s.estimates);
    js["variances"] = mat(s.variances);
    j["summaries"].push_back(std::move(js));
  }
  return j.dump(2);
}

void McReport::write_json(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << to_json() << '\n';
  if (!out) throw DataError("failed writing '" + path + "'");
}

void McReport::write_estimates_csv(const std::string& path,
                                   const std::string& estimator) const {
  const McSummary& s = summary(estimator);
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "replication";
  for (const auto& nm : s.param_names)
    out << ',' << nm << ',' << nm << "_se";
  out << '\n';
  for (std::size_t i = 0; i < s.replications.size(); ++i) {
    out << s.replications[i];
    for (std::size_t j = 0; j < s.param_names.size(); ++j) {
      out << ',';
      if (!std::isnan(s.estimates(i, j))) out << s.estimates(i, j);
      out << ',';
      if (!std::isnan(s.variances(i, j)))
        out << std::sqrt(std::max(0.0, s.variances(i, j)));
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace ivhazard
