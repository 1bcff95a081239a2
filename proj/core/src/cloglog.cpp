#include "ivhazard/cloglog.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ivhazard {

double cloglog_prob(double eta) {
  double a = std::exp(eta);
  double p = -std::expm1(-a);
  if (p <= 0.0) return std::numeric_limits<double>::min();
  if (p >= 1.0) return std::nextafter(1.0, 0.0);
  return p;
}

double cloglog_loglik_term(int y, double eta) {
  double a = std::exp(eta);
  if (y == 1) {
    // log(1 - exp(-a)) on the branch that avoids cancellation.
    if (a > 0.6931471805599453) return std::log1p(-std::exp(-a));
    return std::log(-std::expm1(-a));
  }
  return -a;
}

double cloglog_score_weight(int y, double eta) {
  double a = std::exp(eta);
  if (y == 0) return -a;
  if (a > 33.0) {
    double w = a * std::exp(-a);
    return std::isfinite(w) ? w : 0.0;
  }
  return a / std::expm1(a);
}

double cloglog_hessian_weight(int y, double eta) {
  double a = std::exp(eta);
  double d;
  if (y == 0) {
    d = -a;
  } else if (a < 1e-8) {
    // Series around a = 0; relative error O(a^2).
    d = -0.5 * a + a * a / 6.0;
  } else if (a > 40.0) {
    d = -a * (a - 1.0) * std::exp(-a);
  } else {
    double em = std::expm1(a);
    d = a * (em * (1.0 - a) - a) / (em * em);
  }
  // Curvature must stay strictly negative even when the exact value
  // underflows (or overflows to NaN at the exp limit).
  if (!(d < 0.0)) d = -1e-300;
  return d;
}

std::vector<double> score_contribution(int y, std::span<const double> xi_row,
                                       std::span<const double> gamma) {
  if (xi_row.size() != gamma.size())
    throw std::invalid_argument("score_contribution: dimension mismatch");
  double eta = 0.0;
  for (std::size_t j = 0; j < gamma.size(); ++j) eta += xi_row[j] * gamma[j];
  double w = cloglog_score_weight(y, eta);
  std::vector<double> s(xi_row.size());
  for (std::size_t j = 0; j < s.size(); ++j) s[j] = w * xi_row[j];
  return s;
}

CloglogWeights cloglog_weights(const Matrix& design,
                               std::span<const double> gamma,
                               std::span<const int> y) {
  if (design.rows() != y.size())
    throw std::invalid_argument("cloglog_weights: shape mismatch");
  CloglogWeights out;
  out.eta = mat_vec(design, gamma);
  const std::size_t n = design.rows();
  out.prob.resize(n);
  out.w.resize(n);
  out.d.resize(n);
  std::vector<double> ll(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.prob[i] = cloglog_prob(out.eta[i]);
    out.w[i] = cloglog_score_weight(y[i], out.eta[i]);
    out.d[i] = cloglog_hessian_weight(y[i], out.eta[i]);
    ll[i] = cloglog_loglik_term(y[i], out.eta[i]);
  }
  out.loglik = pairwise_sum(ll);
  return out;
}

double cloglog_loglik(const Matrix& design, std::span<const double> gamma,
                      std::span<const int> y) {
  std::vector<double> eta = mat_vec(design, gamma);
  std::vector<double> ll(eta.size());
  for (std::size_t i = 0; i < eta.size(); ++i)
    ll[i] = cloglog_loglik_term(y[i], eta[i]);
  return pairwise_sum(ll);
}

int perfect_predictor_direction(const Matrix& x, std::size_t col,
                                std::span<const int> y) {
  const std::size_t n = x.rows();
  double nonzero_value = 0.0;
  bool two_valued = true, has_zero = false, has_nonzero = false;
  for (std::size_t i = 0; i < n && two_valued; ++i) {
    double v = x(i, col);
    if (v == 0.0) {
      has_zero = true;
    } else if (!has_nonzero) {
      has_nonzero = true;
      nonzero_value = v;
    } else if (v != nonzero_value) {
      two_valued = false;
    }
  }
  if (!two_valued || !has_zero || !has_nonzero) return -1;
  int constant_y = -2;
  for (std::size_t i = 0; i < n; ++i) {
    if (x(i, col) == 0.0) continue;
    if (constant_y == -2) {
      constant_y = y[i];
    } else if (y[i] != constant_y) {
      return -1;
    }
  }
  return constant_y;
}

namespace {

std::vector<double> starting_values(const Matrix& x,
                                    std::span<const std::size_t> kept,
                                    const std::vector<std::size_t>& dummies,
                                    std::span<const int> y) {
  std::vector<double> gamma(x.cols(), 0.0);
  for (std::size_t c = 0; c < kept.size(); ++c) {
    if (std::find(dummies.begin(), dummies.end(), kept[c]) == dummies.end())
      continue;
    double events = 0.0, at_risk = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
      if (x(i, c) == 1.0) {
        at_risk += 1.0;
        events += y[i];
      }
    }
    double psi = -18.0;
    if (at_risk > 0.0 && events > 0.0) {
      double rate = events / at_risk;
      psi = (rate >= 1.0) ? 3.0 : std::log(-std::log1p(-rate));
    }
    gamma[c] = std::clamp(psi, -18.0, 3.0);
  }
  return gamma;
}

double inf_norm(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

SecondStageFit fit_cloglog(const CloglogDesign& design, std::span<const int> y,
                           const CloglogOptions& options) {
  const std::size_t n = design.x.rows();
  const std::size_t p0 = design.x.cols();
  if (y.size() != n)
    throw std::invalid_argument("fit_cloglog: outcome length mismatch");
  if (p0 == 0) throw EstimationError("second stage: empty design");
  std::vector<std::string> names = design.names;
  if (names.empty())
    for (std::size_t k = 0; k < p0; ++k)
      names.push_back("x" + std::to_string(k + 1));
  if (names.size() != p0)
    throw std::invalid_argument("fit_cloglog: one name per column required");

  std::size_t n_events = 0;
  for (int yi : y) n_events += static_cast<std::size_t>(yi);
  if (n_events == 0)
    throw EstimationError("second stage: no failures observed; the outcome "
                          "is 0 in every row");
  if (n_events == n)
    throw EstimationError("second stage: the outcome is 1 in every row; the "
                          "model is degenerate");

  SecondStageFit fit;
  const double tol = options.rank_tol < 0.0 ? default_rank_tolerance()
                                            : options.rank_tol;

  std::vector<std::size_t> candidates;
  for (std::size_t k = 0; k < p0; ++k) candidates.push_back(k);

  auto scan_separation = [&](std::vector<std::size_t>& cols) {
    if (!options.scan_perfect_predictors) return;
    std::vector<std::size_t> keep;
    for (std::size_t k : cols) {
      int constant_y = perfect_predictor_direction(design.x, k, y);
      if (constant_y >= 0) {
        fit.dropped_separated.push_back(k);
        fit.warnings.push_back(
            "'" + names[k] + "' predicts " +
            (constant_y == 1 ? "failure" : "survival") +
            " perfectly where it is nonzero; column dropped");
      } else {
        keep.push_back(k);
      }
    }
    cols = std::move(keep);
  };

  scan_separation(candidates);
  if (candidates.empty())
    throw EstimationError("second stage: every regressor was dropped as a "
                          "perfect predictor");

  std::vector<std::size_t> kept;
  if (options.screen_columns) {
    Matrix m = select_columns(design.x, candidates);
    fit.screening = pivoted_rank(m, tol);
    for (std::size_t c : fit.screening.kept_columns)
      kept.push_back(candidates[c]);
    for (std::size_t c : fit.screening.dropped_columns) {
      fit.dropped_collinear.push_back(candidates[c]);
      fit.warnings.push_back("'" + names[candidates[c]] +
                             "' is collinear with preceding regressors; "
                             "column dropped");
    }
  } else {
    kept = candidates;
  }
  if (kept.empty())
    throw EstimationError("second stage: no regressors remain after "
                          "screening");

  // Outer loop restarts whenever the divergence watchdog removes a column.
  std::size_t restarts = 0;
  while (true) {
    Matrix x = select_columns(design.x, kept);
    std::vector<double> gamma =
        starting_values(x, kept, design.dummy_columns, y);
    CloglogWeights cur = cloglog_weights(x, gamma, y);
    fit.loglik_path.assign(1, cur.loglik);
    fit.converged = false;
    fit.convergence_reason.clear();
    fit.iterations = 0;

    std::vector<double> prev_colmax(kept.size(), 0.0);
    std::vector<int> growth_count(kept.size(), 0);
    std::ptrdiff_t diverging = -1;

    for (std::size_t iter = 1; iter <= options.max_iterations; ++iter) {
      std::vector<double> g = weighted_column_sums(x, cur.w);
      double gnorm = inf_norm(g);
      double scale = std::max(1.0, std::abs(cur.loglik));
      if (gnorm < options.score_tol * scale) {
        fit.converged = true;
        fit.convergence_reason = "score";
        break;
      }
      Matrix neg_h = weighted_gram(x, cur.d);
      neg_h *= -1.0;
      std::vector<double> delta;
      try {
        // Zero tolerance here: optimization tolerates ill-conditioning, the
        // variance stage is where conditioning is policed.
        delta = LdltFactor(neg_h, 0.0, "second-stage curvature").solve(g);
      } catch (const SingularMatrixError& e) {
        throw EstimationError(std::string("second stage: Newton step "
                                          "failed: ") + e.what());
      }
      bool finite = true;
      for (double v : delta) finite = finite && std::isfinite(v);
      if (!finite)
        throw EstimationError("second stage: Newton step is not finite");

      double lambda = 1.0;
      std::vector<double> cand(gamma.size());
      double ll_new = -std::numeric_limits<double>::infinity();
      bool accepted = false;
      for (std::size_t h = 0; h <= options.max_step_halvings; ++h) {
        for (std::size_t j = 0; j < gamma.size(); ++j)
          cand[j] = gamma[j] + lambda * delta[j];
        ll_new = cloglog_loglik(x, cand, y);
        if (ll_new >= cur.loglik) {
          accepted = true;
          break;
        }
        lambda *= 0.5;
      }
      if (!accepted) {
        if (gnorm < 1e-5 * scale) {
          fit.converged = true;
          fit.convergence_reason = "stalled near optimum";
          fit.warnings.push_back("second stage: step halving stalled with "
                                 "max |score| = " + std::to_string(gnorm));
          break;
        }
        throw EstimationError(
            "second stage did not converge: step halving failed to improve "
            "the log likelihood (max |score| = " + std::to_string(gnorm) +
            ")");
      }
      double improvement = ll_new - cur.loglik;
      gamma = cand;
      cur = cloglog_weights(x, gamma, y);
      fit.loglik_path.push_back(cur.loglik);
      fit.iterations = iter;

      // Divergence watchdog: a coefficient whose largest row contribution to
      // eta keeps growing past the threshold marks quasi-separation that the
      // a-priori scan cannot see.
      for (std::size_t k = 0; k < kept.size(); ++k) {
        double colmax = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          colmax = std::max(colmax, std::abs(gamma[k] * x(i, k)));
        if (colmax > options.divergence_threshold &&
            colmax > prev_colmax[k]) {
          if (++growth_count[k] >= 3) diverging = static_cast<std::ptrdiff_t>(k);
        } else {
          growth_count[k] = 0;
        }
        prev_colmax[k] = colmax;
      }
      if (diverging >= 0) break;

      if (improvement < options.loglik_tol *
                            std::max(1.0, std::abs(cur.loglik))) {
        fit.converged = true;
        fit.convergence_reason = "loglik";
        break;
      }
    }

    if (diverging >= 0) {
      std::size_t col = kept[static_cast<std::size_t>(diverging)];
      fit.dropped_separated.push_back(col);
      fit.warnings.push_back("'" + names[col] + "' diverged during "
                             "maximization (quasi-separation); column "
                             "dropped and the fit restarted");
      kept.erase(kept.begin() + diverging);
      if (kept.empty())
        throw EstimationError("second stage: every regressor was dropped by "
                              "the divergence watchdog");
      if (++restarts > p0)
        throw EstimationError("second stage: too many divergence restarts");
      continue;
    }
    if (!fit.converged)
      throw EstimationError(
          "second stage did not converge within " +
          std::to_string(options.max_iterations) + " iterations");

    fit.gamma = gamma;
    fit.kept = kept;
    for (std::size_t k : kept) fit.kept_names.push_back(names[k]);
    fit.weights = std::move(cur);
    fit.loglik = fit.weights.loglik;
    std::sort(fit.dropped_separated.begin(), fit.dropped_separated.end());
    return fit;
  }
}

SecondStageFit fit_cloglog(const EstimationFrame& frame, const CfBlock& cf,
                           const CloglogOptions& options) {
  const std::size_t n = frame.rows();
  const std::size_t t = frame.n_periods();
  const std::size_t e = frame.exog.cols();
  const std::size_t kappa = frame.x_endog.cols();
  if (cf.columns.rows() != n)
    throw std::invalid_argument("fit_cloglog: control function rows must "
                                "match the frame");
  CloglogDesign design;
  design.x = Matrix(n, t + e + kappa + cf.columns.cols());
  for (std::size_t i = 0; i < n; ++i) {
    design.x(i, frame.row_period[i]) = 1.0;
    for (std::size_t j = 0; j < e; ++j) design.x(i, t + j) = frame.exog(i, j);
    for (std::size_t j = 0; j < kappa; ++j)
      design.x(i, t + e + j) = frame.x_endog(i, j);
    for (std::size_t j = 0; j < cf.columns.cols(); ++j)
      design.x(i, t + e + kappa + j) = cf.columns(i, j);
  }
  for (std::size_t k = 0; k < t; ++k) {
    design.names.push_back("psi_t" + std::to_string(frame.periods[k]));
    design.dummy_columns.push_back(k);
  }
  for (const auto& nm : frame.exog_names) design.names.push_back(nm);
  for (const auto& nm : frame.endog_names) design.names.push_back(nm);
  for (const auto& term : cf.terms) design.names.push_back(term.label());
  std::vector<int> yv(frame.y.begin(), frame.y.end());
  return fit_cloglog(design, yv, options);
}

}  // namespace ivhazard
