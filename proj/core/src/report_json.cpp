#include <json.hpp>

#include "ivhazard/estimator.hpp"

namespace ivhazard {

namespace {

using nlohmann::json;

json matrix_json(const Matrix& m) {
  json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  json data = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) data.push_back(m(i, c));
  j["data"] = std::move(data);
  return j;
}

Matrix matrix_from_json(const json& j) {
  Matrix m(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>());
  const json& data = j.at("data");
  if (data.size() != m.rows() * m.cols())
    throw DataError("report JSON: matrix data length mismatch");
  std::size_t k = 0;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) m(i, c) = data[k++];
  return m;
}

json coef_json(const Coefficient& c) {
  return {{"name", c.name},         {"estimate", c.estimate},
          {"std_error", c.std_error}, {"z", c.z},
          {"p_value", c.p_value},   {"ci_low", c.ci_low},
          {"ci_high", c.ci_high}};
}

Coefficient coef_from_json(const json& j) {
  Coefficient c;
  c.name = j.at("name").get<std::string>();
  c.estimate = j.at("estimate").get<double>();
  c.std_error = j.at("std_error").get<double>();
  c.z = j.at("z").get<double>();
  c.p_value = j.at("p_value").get<double>();
  c.ci_low = j.at("ci_low").get<double>();
  c.ci_high = j.at("ci_high").get<double>();
  return c;
}

}  // namespace

std::string EstimateReport::to_json() const {
  json j;
  j["estimator"] = estimator;
  j["coefficients"] = json::array();
  for (const auto& c : coefficients) j["coefficients"].push_back(coef_json(c));
  j["naive_std_errors"] = naive_std_errors;
  j["first_stage"] = json::array();
  for (const auto& eq : first_stage) {
    json je;
    je["name"] = eq.name;
    je["f_excluded"] = eq.f_excluded;
    je["sigma2"] = eq.sigma2;
    je["coefficients"] = json::array();
    for (const auto& c : eq.coefficients)
      je["coefficients"].push_back(coef_json(c));
    j["first_stage"].push_back(std::move(je));
  }
  j["dropped_instruments"] = dropped_instruments;
  j["dropped_regressors"] = dropped_regressors;
  j["dropped_perfect_predictors"] = dropped_perfect_predictors;
  j["warnings"] = warnings;
  j["n_entities"] = n_entities;
  j["n_rows"] = n_rows;
  j["n_clusters"] = n_clusters;
  j["iterations"] = iterations;
  j["loglik"] = loglik;
  j["converged"] = converged;
  j["convergence_reason"] = convergence_reason;
  j["vce_mode"] = vce_mode;
  j["level"] = level;
  j["theta_labels"] = theta_labels;
  j["g"] = matrix_json(g);
  j["omega"] = matrix_json(omega);
  j["v"] = matrix_json(v);
  j["second_stage_offsets"] = second_stage_offsets;
  return j.dump(2);
}

EstimateReport EstimateReport::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("report JSON: ") + e.what());
  }
  EstimateReport r;
  r.estimator = j.at("estimator").get<std::string>();
  for (const auto& jc : j.at("coefficients"))
    r.coefficients.push_back(coef_from_json(jc));
  r.naive_std_errors = j.at("naive_std_errors").get<std::vector<double>>();
  for (const auto& je : j.at("first_stage")) {
    FirstStageEq eq;
    eq.name = je.at("name").get<std::string>();
    eq.f_excluded = je.at("f_excluded").get<double>();
    eq.sigma2 = je.at("sigma2").get<double>();
    for (const auto& jc : je.at("coefficients"))
      eq.coefficients.push_back(coef_from_json(jc));
    r.first_stage.push_back(std::move(eq));
  }
  r.dropped_instruments =
      j.at("dropped_instruments").get<std::vector<std::string>>();
  r.dropped_regressors =
      j.at("dropped_regressors").get<std::vector<std::string>>();
  r.dropped_perfect_predictors =
      j.at("dropped_perfect_predictors").get<std::vector<std::string>>();
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  r.n_entities = j.at("n_entities").get<std::size_t>();
  r.n_rows = j.at("n_rows").get<std::size_t>();
  r.n_clusters = j.at("n_clusters").get<std::size_t>();
  r.iterations = j.at("iterations").get<std::size_t>();
  r.loglik = j.at("loglik").get<double>();
  r.converged = j.at("converged").get<bool>();
  r.convergence_reason = j.at("convergence_reason").get<std::string>();
  r.vce_mode = j.at("vce_mode").get<std::string>();
  r.level = j.at("level").get<double>();
  r.theta_labels = j.at("theta_labels").get<std::vector<std::string>>();
  r.g = matrix_from_json(j.at("g"));
  r.omega = matrix_from_json(j.at("omega"));
  r.v = matrix_from_json(j.at("v"));
  r.second_stage_offsets =
      j.at("second_stage_offsets").get<std::vector<std::size_t>>();
  return r;
}

}  // namespace ivhazard
