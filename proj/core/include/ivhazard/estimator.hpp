#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ivhazard/cloglog.hpp"
#include "ivhazard/control_function.hpp"
#include "ivhazard/first_stage.hpp"
#include "ivhazard/panel.hpp"
#include "ivhazard/transform.hpp"
#include "ivhazard/vce.hpp"

namespace ivhazard {

enum class EstimatorKind {
  control_function,  // instrumented hazard with residual polynomial terms
  naive,             // plain cloglog on the raw regressors, no first stage
  two_stage_ps,      // fitted values replace the endogenous regressors
};

struct EstimateOptions {
  EstimatorKind kind = EstimatorKind::control_function;
  ControlFunctionSpec cf;                // order and form of residual terms
  std::vector<std::string> transforms;   // expressions; empty = raw regressors
  VceMode vce_mode = VceMode::standard;
  GForm g_form = GForm::sample_jacobian;
  bool kronecker = false;                // Kronecker path for identical instruments
  bool dof_correction = false;           // c/(c-1) on Omega
  double level = 0.95;                   // confidence level
  bool compute_naive_se = true;          // second-stage-only SEs alongside
  FirstStageOptions first_stage;
  CloglogOptions cloglog;
};

struct Coefficient {
  std::string name;
  double estimate = 0.0;
  double std_error = 0.0;
  double z = 0.0;
  double p_value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

struct EstimateReport {
  std::string estimator;  // "control_function", "naive", "two_stage_ps"

  std::vector<Coefficient> coefficients;   // second stage, sandwich SEs
  std::vector<double> naive_std_errors;    // second-stage-only SEs, aligned
  struct FirstStageEq {
    std::string name;
    std::vector<Coefficient> coefficients;
    double f_excluded = 0.0;
    double sigma2 = 0.0;
  };
  std::vector<FirstStageEq> first_stage;

  std::vector<std::string> dropped_instruments;
  std::vector<std::string> dropped_regressors;       // collinear
  std::vector<std::string> dropped_perfect_predictors;
  std::vector<std::string> warnings;

  std::size_t n_entities = 0;
  std::size_t n_rows = 0;
  std::size_t n_clusters = 0;
  std::size_t iterations = 0;
  double loglik = 0.0;
  bool converged = false;
  std::string convergence_reason;
  std::string vce_mode;  // "standard" or "zero_tolerance"
  double level = 0.95;

  std::vector<std::string> theta_labels;  // stacked parameter order
  Matrix g;      // stacked Jacobian
  Matrix omega;  // clustered middle matrix
  Matrix v;      // sandwich variance, theta order

  // Position of each second-stage coefficient in the stacked order.
  std::vector<std::size_t> second_stage_offsets;

  std::string to_json() const;
  static EstimateReport from_json(const std::string& text);
};

// Fitted internals, exposed so diagnostics and tests can reuse the pieces.
struct EstimationContext {
  EstimationFrame frame;
  std::vector<RegressorTransform> transforms;
  FirstStageFit first;
  CfBlock cf;
  CloglogDesign design;
  SecondStageFit second;
  StackedModel model;  // frame/first pointers refer to this context
  GAssembly g;
  Matrix scores;
  Matrix omega;
  Matrix v;
  std::vector<std::size_t> cluster_of_entity;
  std::size_t n_clusters = 0;
};

EstimateReport estimate(const PanelDataset& data,
                        const EstimateOptions& options);
EstimateReport estimate(const PanelDataset& data,
                        const EstimateOptions& options,
                        EstimationContext& ctx);

void write_labeled_matrix_csv(const std::string& path, const Matrix& m,
                              const std::vector<std::string>& labels);

}  // namespace ivhazard
