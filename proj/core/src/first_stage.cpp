#include "ivhazard/first_stage.hpp"

#include <algorithm>
#include <cmath>

namespace ivhazard {

namespace {

Matrix stack_instruments(const EstimationFrame& frame,
                         std::vector<std::string>& names) {
  const std::size_t n = frame.rows();
  const std::size_t t = frame.n_periods();
  const std::size_t e = frame.exog.cols();
  const std::size_t l2 = frame.instruments.cols();
  Matrix z(n, t + e + l2);
  for (std::size_t i = 0; i < n; ++i) {
    z(i, frame.row_period[i]) = 1.0;
    for (std::size_t j = 0; j < e; ++j) z(i, t + j) = frame.exog(i, j);
    for (std::size_t j = 0; j < l2; ++j)
      z(i, t + e + j) = frame.instruments(i, j);
  }
  names.clear();
  for (std::size_t k = 0; k < t; ++k)
    names.push_back("d_t" + std::to_string(frame.periods[k]));
  for (const auto& nm : frame.exog_names) names.push_back(nm);
  for (const auto& nm : frame.instrument_names) names.push_back(nm);
  return z;
}

double residual_sumsq(const Matrix& x, std::size_t col, const Matrix& z,
                      std::span<const std::size_t> cols,
                      std::vector<double>* coef_out,
                      std::vector<double>* resid_out) {
  const std::size_t n = x.rows();
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x(i, col);
  Matrix design = select_columns(z, cols);
  std::vector<double> coef = least_squares(design, y);
  std::vector<double> fitted = mat_vec(design, coef);
  std::vector<double> sq(n);
  for (std::size_t i = 0; i < n; ++i) {
    double r = y[i] - fitted[i];
    if (resid_out) (*resid_out)[i] = r;
    sq[i] = r * r;
  }
  if (coef_out) *coef_out = std::move(coef);
  return pairwise_sum(sq);
}

}  // namespace

Matrix FirstStageFit::pi_matrix() const {
  Matrix m(z.cols(), equations.size());
  for (std::size_t j = 0; j < equations.size(); ++j)
    for (std::size_t k = 0; k < equations[j].columns.size(); ++k)
      m(equations[j].columns[k], j) = equations[j].pi[k];
  return m;
}

FirstStageFit fit_first_stage(const EstimationFrame& frame,
                              const FirstStageOptions& options) {
  const std::size_t kappa = frame.x_endog.cols();
  if (kappa == 0)
    throw EstimationError("first stage: no endogenous regressors");
  if (!options.instrument_subsets.empty() &&
      options.instrument_subsets.size() != kappa)
    throw UsageError("first stage: instrument_subsets must have one entry "
                     "per endogenous regressor");
  const double tol = options.rank_tol < 0.0 ? default_rank_tolerance()
                                            : options.rank_tol;
  FirstStageFit fit;
  Matrix zfull = stack_instruments(frame, fit.screening_names);
  fit.screening = pivoted_rank(zfull, tol);
  const std::size_t n_incl_raw = frame.n_periods() + frame.exog.cols();
  fit.n_included = 0;
  for (std::size_t k : fit.screening.kept_columns)
    if (k < n_incl_raw) ++fit.n_included;
  for (std::size_t k : fit.screening.dropped_columns) {
    fit.warnings.push_back("collinear column dropped from the instrument "
                           "set: " + fit.screening_names[k]);
    if (k < n_incl_raw)
      fit.warnings.back() += " (included regressor; it will be dropped from "
                             "the second stage as well)";
  }
  fit.z = select_columns(zfull, fit.screening.kept_columns);
  for (std::size_t k : fit.screening.kept_columns)
    fit.z_names.push_back(fit.screening_names[k]);

  // Map kept z columns back to instrument-list indices for subset handling.
  std::vector<std::ptrdiff_t> inst_index_of_kept(fit.z.cols(), -1);
  for (std::size_t c = 0; c < fit.screening.kept_columns.size(); ++c) {
    std::size_t raw = fit.screening.kept_columns[c];
    if (raw >= n_incl_raw)
      inst_index_of_kept[c] = static_cast<std::ptrdiff_t>(raw - n_incl_raw);
  }

  std::size_t total_excluded_kept = 0;
  for (auto v : inst_index_of_kept)
    if (v >= 0) ++total_excluded_kept;
  if (total_excluded_kept < kappa)
    throw EstimationError(
        "first stage: " + std::to_string(total_excluded_kept) +
        " excluded instrument(s) remain after collinearity screening, but " +
        std::to_string(kappa) +
        " endogenous regressor(s) must be instrumented; the model is not "
        "identified");

  fit.residuals = Matrix(frame.rows(), kappa);
  std::vector<double> resid(frame.rows());
  for (std::size_t j = 0; j < kappa; ++j) {
    FirstStageFit::Equation eq;
    eq.name = frame.endog_names[j];
    std::vector<std::size_t> incl_cols;
    for (std::size_t c = 0; c < fit.z.cols(); ++c) {
      if (inst_index_of_kept[c] < 0) {
        eq.columns.push_back(c);
        incl_cols.push_back(c);
      } else if (options.instrument_subsets.empty() ||
                 std::find(options.instrument_subsets[j].begin(),
                           options.instrument_subsets[j].end(),
                           static_cast<std::size_t>(inst_index_of_kept[c])) !=
                     options.instrument_subsets[j].end()) {
        eq.columns.push_back(c);
      }
    }
    eq.n_excluded = eq.columns.size() - incl_cols.size();
    if (eq.n_excluded == 0)
      throw EstimationError("first stage: equation for '" + eq.name +
                            "' has no excluded instruments after screening; "
                            "every endogenous regressor needs at least one");
    double rss = residual_sumsq(frame.x_endog, j, fit.z, eq.columns, &eq.pi,
                                &resid);
    for (std::size_t i = 0; i < frame.rows(); ++i)
      fit.residuals(i, j) = resid[i];
    eq.sigma2 = rss / static_cast<double>(frame.rows());
    double rss_restricted =
        residual_sumsq(frame.x_endog, j, fit.z, incl_cols, nullptr, nullptr);
    double df = static_cast<double>(frame.rows()) -
                static_cast<double>(eq.columns.size());
    if (df > 0.0 && rss > 0.0)
      eq.f_excluded = ((rss_restricted - rss) /
                       static_cast<double>(eq.n_excluded)) /
                      (rss / df);
    fit.equations.push_back(std::move(eq));
  }
  return fit;
}

Matrix first_stage_score(const FirstStageFit& fit,
                         const EstimationFrame& frame) {
  const std::size_t n = frame.n_entities();
  Matrix score(n, fit.stacked_dim());
  std::size_t offset = 0;
  for (std::size_t j = 0; j < fit.equations.size(); ++j) {
    const auto& eq = fit.equations[j];
    for (std::size_t i = 0; i < frame.rows(); ++i) {
      double v = fit.residuals(i, j);
      if (v == 0.0) continue;
      std::size_t e = frame.row_entity[i];
      for (std::size_t c = 0; c < eq.columns.size(); ++c)
        score(e, offset + c) += v * fit.z(i, eq.columns[c]);
    }
    offset += eq.columns.size();
  }
  return score;
}

}  // namespace ivhazard
