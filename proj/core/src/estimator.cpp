#include "ivhazard/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "ivhazard/stats.hpp"

namespace ivhazard {

namespace {

CloglogDesign make_design(const EstimationFrame& frame,
                          const Matrix& structural,
                          const std::vector<std::string>& structural_names,
                          const CfBlock* cf) {
  const std::size_t n = frame.rows();
  const std::size_t t = frame.n_periods();
  const std::size_t e = frame.exog.cols();
  const std::size_t nf = structural.cols();
  const std::size_t nc = cf ? cf->columns.cols() : 0;
  CloglogDesign design;
  design.x = Matrix(n, t + e + nf + nc);
  for (std::size_t i = 0; i < n; ++i) {
    design.x(i, frame.row_period[i]) = 1.0;
    for (std::size_t j = 0; j < e; ++j) design.x(i, t + j) = frame.exog(i, j);
    for (std::size_t j = 0; j < nf; ++j)
      design.x(i, t + e + j) = structural(i, j);
    for (std::size_t j = 0; j < nc; ++j)
      design.x(i, t + e + nf + j) = cf->columns(i, j);
  }
  for (std::size_t k = 0; k < t; ++k) {
    design.names.push_back("psi_t" + std::to_string(frame.periods[k]));
    design.dummy_columns.push_back(k);
  }
  for (const auto& nm : frame.exog_names) design.names.push_back(nm);
  for (const auto& nm : structural_names) design.names.push_back(nm);
  if (cf)
    for (const auto& term : cf->terms) design.names.push_back(term.label());
  return design;
}

void prescan_exog(EstimationFrame& frame, EstimateReport& report) {
  if (frame.exog.cols() == 0) return;
  std::vector<std::size_t> keep;
  std::vector<std::string> kept_names;
  for (std::size_t j = 0; j < frame.exog.cols(); ++j) {
    int dir = perfect_predictor_direction(frame.exog, j, frame.y);
    if (dir >= 0) {
      report.dropped_perfect_predictors.push_back(frame.exog_names[j]);
      report.warnings.push_back(
          "'" + frame.exog_names[j] + "' predicts " +
          (dir == 1 ? "failure" : "survival") +
          " perfectly where it is nonzero; removed from both stages");
    } else {
      keep.push_back(j);
      kept_names.push_back(frame.exog_names[j]);
    }
  }
  if (keep.size() != frame.exog.cols()) {
    frame.exog = select_columns(frame.exog, keep);
    frame.exog_names = std::move(kept_names);
  }
}

void make_clusters(const EstimationFrame& frame, EstimationContext& ctx) {
  const std::size_t n = frame.n_entities();
  ctx.cluster_of_entity.resize(n);
  bool have = false;
  for (const auto& c : frame.entity_cluster)
    if (!c.empty()) {
      have = true;
      break;
    }
  if (!have) {
    for (std::size_t i = 0; i < n; ++i) ctx.cluster_of_entity[i] = i;
    ctx.n_clusters = n;
    return;
  }
  std::map<std::string, std::size_t> ids;
  for (std::size_t i = 0; i < n; ++i) {
    auto [it, fresh] =
        ids.emplace(frame.entity_cluster[i], ids.size());
    ctx.cluster_of_entity[i] = it->second;
  }
  ctx.n_clusters = ids.size();
}

Matrix fitted_values(const FirstStageFit& first) {
  Matrix xhat(first.z.rows(), first.equations.size());
  for (std::size_t j = 0; j < first.equations.size(); ++j) {
    const auto& eq = first.equations[j];
    for (std::size_t i = 0; i < first.z.rows(); ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < eq.columns.size(); ++k)
        s += first.z(i, eq.columns[k]) * eq.pi[k];
      xhat(i, j) = s;
    }
  }
  return xhat;
}

Matrix second_stage_scores(const EstimationFrame& frame, const Matrix& xi,
                           std::span<const double> w) {
  Matrix scores(frame.n_entities(), xi.cols());
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    std::size_t e = frame.row_entity[r];
    for (std::size_t j = 0; j < xi.cols(); ++j)
      scores(e, j) += w[r] * xi(r, j);
  }
  return scores;
}

Coefficient make_coefficient(const std::string& name, double est, double var,
                             double zcrit, std::vector<std::string>& warnings) {
  Coefficient c;
  c.name = name;
  c.estimate = est;
  if (var < 0.0) {
    if (var < -1e-8 * std::max(1.0, std::abs(est)))
      warnings.push_back("negative variance for '" + name +
                         "' clamped to zero");
    var = 0.0;
  }
  c.std_error = std::sqrt(var);
  if (c.std_error > 0.0) {
    c.z = est / c.std_error;
    c.p_value = 2.0 * normal_cdf(-std::abs(c.z));
  } else {
    c.z = 0.0;
    c.p_value = 1.0;
  }
  c.ci_low = est - zcrit * c.std_error;
  c.ci_high = est + zcrit * c.std_error;
  return c;
}

}  // namespace

EstimateReport estimate(const PanelDataset& data,
                        const EstimateOptions& options) {
  EstimationContext ctx;
  return estimate(data, options, ctx);
}

EstimateReport estimate(const PanelDataset& data,
                        const EstimateOptions& options,
                        EstimationContext& ctx) {
  if (!(options.level > 0.0 && options.level < 1.0))
    throw UsageError("confidence level must be strictly between 0 and 1");
  const double zcrit = normal_quantile(0.5 * (1.0 + options.level));

  EstimateReport report;
  report.level = options.level;
  report.vce_mode =
      options.vce_mode == VceMode::standard ? "standard" : "zero_tolerance";
  switch (options.kind) {
    case EstimatorKind::control_function:
      report.estimator = "control_function";
      break;
    case EstimatorKind::naive:
      report.estimator = "naive";
      break;
    case EstimatorKind::two_stage_ps:
      report.estimator = "two_stage_ps";
      break;
  }

  ctx.frame = build_frame(data);
  prescan_exog(ctx.frame, report);
  make_clusters(ctx.frame, ctx);
  EstimationFrame& frame = ctx.frame;

  ctx.transforms.clear();
  if (!options.transforms.empty()) {
    for (const auto& expr : options.transforms)
      ctx.transforms.push_back(parse_transform(expr, frame.endog_names));
  } else if (frame.x_endog.cols() > 0) {
    ctx.transforms = identity_transforms(frame.endog_names);
  } else if (options.kind != EstimatorKind::naive) {
    // A purely exogenous hazard fit is allowed only in naive mode.
    throw UsageError(
        "no endogenous regressors given; only the naive estimator can fit a "
        "model without them");
  }
  std::vector<std::string> structural_names;
  for (const auto& t : ctx.transforms) structural_names.push_back(t.source);

  const bool with_cf = options.kind == EstimatorKind::control_function;
  const bool with_first = options.kind != EstimatorKind::naive;

  if (with_first) {
    ctx.first = fit_first_stage(frame, options.first_stage);
    for (const auto& w : ctx.first.warnings) report.warnings.push_back(w);
    // Included-block drops resurface through the second-stage screen; only
    // excluded instruments are reported here.
    const std::size_t excl_start = frame.n_periods() + frame.exog.cols();
    for (std::size_t k : ctx.first.screening.dropped_columns)
      if (k >= excl_start)
        report.dropped_instruments.push_back(ctx.first.screening_names[k]);
  }

  Matrix structural;
  if (options.kind == EstimatorKind::two_stage_ps) {
    structural = apply_transforms(fitted_values(ctx.first), ctx.transforms);
    report.warnings.push_back(
        "two-stage predictor substitution: second-stage standard errors "
        "ignore the estimated first stage");
  } else {
    structural = apply_transforms(frame.x_endog, ctx.transforms);
  }

  if (with_cf) ctx.cf = build_cf(ctx.first.residuals, options.cf);
  ctx.design = make_design(frame, structural, structural_names,
                           with_cf ? &ctx.cf : nullptr);
  ctx.second = fit_cloglog(ctx.design, frame.y, options.cloglog);
  for (const auto& w : ctx.second.warnings) report.warnings.push_back(w);
  for (std::size_t c : ctx.second.dropped_collinear)
    report.dropped_regressors.push_back(ctx.design.names[c]);
  for (std::size_t c : ctx.second.dropped_separated)
    report.dropped_perfect_predictors.push_back(ctx.design.names[c]);

  Matrix xi = select_columns(ctx.design.x, ctx.second.kept);

  if (with_cf) {
    StackedModel& m = ctx.model;
    m.frame = &ctx.frame;
    m.first = &ctx.first;
    m.xi = xi;
    m.xi_names = ctx.second.kept_names;
    m.gamma = ctx.second.gamma;
    m.w = ctx.second.weights.w;
    m.d = ctx.second.weights.d;
    const std::size_t cf_start = ctx.design.x.cols() - ctx.cf.terms.size();
    m.cf_term_of_col.assign(xi.cols(), -1);
    m.cf_terms_kept.clear();
    m.beta3.clear();
    for (std::size_t c = 0; c < ctx.second.kept.size(); ++c) {
      std::size_t raw = ctx.second.kept[c];
      if (raw >= cf_start) {
        m.cf_term_of_col[c] =
            static_cast<std::ptrdiff_t>(m.cf_terms_kept.size());
        m.cf_terms_kept.push_back(ctx.cf.terms[raw - cf_start]);
        m.beta3.push_back(ctx.second.gamma[c]);
      }
    }
    ctx.g = build_G(m, options.g_form, options.kronecker);
    ctx.scores = stacked_scores(m);
    report.theta_labels = m.labels();
  } else {
    ctx.g = GAssembly{};
    ctx.g.first_dim = 0;
    ctx.g.g21 = Matrix(xi.cols(), 0);
    ctx.g.g22 = weighted_gram(xi, ctx.second.weights.d);
    ctx.scores = second_stage_scores(frame, xi, ctx.second.weights.w);
    report.theta_labels = ctx.second.kept_names;
  }

  ctx.omega = build_Omega(ctx.scores, ctx.cluster_of_entity,
                          options.dof_correction);
  ctx.v = sandwich(ctx.g, ctx.omega, options.vce_mode);

  std::vector<double> naive_var;
  if (options.compute_naive_se && with_cf) {
    Matrix nv = second_stage_only_vce(ctx.g, ctx.omega, options.vce_mode);
    naive_var.resize(nv.rows());
    for (std::size_t i = 0; i < nv.rows(); ++i) naive_var[i] = nv(i, i);
  }

  const std::size_t first_dim = ctx.g.first_dim;
  report.n_entities = frame.n_entities();
  report.n_rows = frame.rows();
  report.n_clusters = ctx.n_clusters;
  report.iterations = ctx.second.iterations;
  report.loglik = ctx.second.loglik;
  report.converged = ctx.second.converged;
  report.convergence_reason = ctx.second.convergence_reason;

  for (std::size_t c = 0; c < ctx.second.kept.size(); ++c) {
    std::size_t idx = first_dim + c;
    report.second_stage_offsets.push_back(idx);
    report.coefficients.push_back(
        make_coefficient(ctx.second.kept_names[c], ctx.second.gamma[c],
                         ctx.v(idx, idx), zcrit, report.warnings));
    if (!naive_var.empty())
      report.naive_std_errors.push_back(
          std::sqrt(std::max(0.0, naive_var[c])));
  }

  if (with_first) {
    std::size_t offset = 0;
    for (const auto& eq : ctx.first.equations) {
      EstimateReport::FirstStageEq feq;
      feq.name = eq.name;
      feq.f_excluded = eq.f_excluded;
      feq.sigma2 = eq.sigma2;
      for (std::size_t k = 0; k < eq.columns.size(); ++k) {
        double var = 0.0;
        if (with_cf) var = ctx.v(offset + k, offset + k);
        feq.coefficients.push_back(
            make_coefficient(ctx.first.z_names[eq.columns[k]], eq.pi[k], var,
                             zcrit, report.warnings));
      }
      offset += eq.columns.size();
      report.first_stage.push_back(std::move(feq));
    }
    if (!with_cf) {
      // Standalone clustered OLS variance for the first stage.
      GAssembly gfs;
      gfs.first_dim = ctx.first.stacked_dim();
      for (const auto& eq : ctx.first.equations) {
        Matrix zj = select_columns(ctx.first.z, eq.columns);
        Matrix blk = gram(zj);
        blk *= -1.0;
        gfs.eq_offsets.push_back(gfs.g11.empty()
                                     ? 0
                                     : gfs.eq_offsets.back() +
                                           gfs.g11.back().rows());
        gfs.g11.push_back(std::move(blk));
      }
      gfs.g21 = Matrix(0, gfs.first_dim);
      gfs.g22 = Matrix(0, 0);
      Matrix fs_scores = first_stage_score(ctx.first, frame);
      Matrix fs_omega = build_Omega(fs_scores, ctx.cluster_of_entity,
                                    options.dof_correction);
      Matrix fs_v = sandwich(gfs, fs_omega, options.vce_mode);
      std::size_t offset2 = 0;
      for (std::size_t j = 0; j < ctx.first.equations.size(); ++j) {
        const auto& eq = ctx.first.equations[j];
        for (std::size_t k = 0; k < eq.columns.size(); ++k) {
          report.first_stage[j].coefficients[k] = make_coefficient(
              ctx.first.z_names[eq.columns[k]], eq.pi[k],
              fs_v(offset2 + k, offset2 + k), zcrit, report.warnings);
        }
        offset2 += eq.columns.size();
      }
    }
  }

  report.g = ctx.g.full();
  report.omega = ctx.omega;
  report.v = ctx.v;
  return report;
}

void write_labeled_matrix_csv(const std::string& path, const Matrix& m,
                              const std::vector<std::string>& labels) {
  if (!labels.empty() && labels.size() != m.cols())
    throw std::invalid_argument("write_labeled_matrix_csv: label count "
                                "mismatch");
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.precision(17);
  if (!labels.empty()) {
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (j) out << ',';
      out << labels[j];
    }
    out << '\n';
  }
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << m(i, j);
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace ivhazard
