#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ivhazard/control_function.hpp"
#include "ivhazard/linalg.hpp"
#include "ivhazard/panel.hpp"

namespace ivhazard {

// Complementary log-log response probability 1 - exp(-exp(eta)), clamped to
// the open interval (0,1) at the floating-point limits.
double cloglog_prob(double eta);

// Row log likelihood: y*log(F(eta)) + (1-y)*(-exp(eta)).
double cloglog_loglik_term(int y, double eta);

// Score weight w with row score contribution w * xi.  With a = exp(eta):
// y=1: a/(e^a-1); y=0: -a.
double cloglog_score_weight(int y, double eta);

// Hessian weight d (strictly negative for finite eta).  With a = exp(eta):
// y=1: a*(e^a*(1-a)-1)/(e^a-1)^2; y=0: -a.
double cloglog_hessian_weight(int y, double eta);

std::vector<double> score_contribution(int y, std::span<const double> xi_row,
                                       std::span<const double> gamma);

struct CloglogWeights {
  std::vector<double> eta;
  std::vector<double> prob;
  std::vector<double> w;  // score weights
  std::vector<double> d;  // Hessian weights
  double loglik = 0.0;
};

CloglogWeights cloglog_weights(const Matrix& design,
                               std::span<const double> gamma,
                               std::span<const int> y);

double cloglog_loglik(const Matrix& design, std::span<const double> gamma,
                      std::span<const int> y);

// Perfect-predictor scan for one column: if the column takes exactly two
// values, one of them zero, and the outcome is constant wherever the column
// is nonzero, returns that constant (0 or 1); otherwise returns -1.  Such a
// column has no finite coefficient in the cloglog model.
int perfect_predictor_direction(const Matrix& x, std::size_t col,
                                std::span<const int> y);

struct CloglogOptions {
  std::size_t max_iterations = 100;
  double score_tol = 1e-8;    // scaled by max(1, |loglik|)
  double loglik_tol = 1e-12;  // relative improvement convergence floor
  double rank_tol = -1.0;     // design screening; negative = default
  bool screen_columns = true;
  bool scan_perfect_predictors = true;
  std::size_t max_step_halvings = 40;
  double divergence_threshold = 30.0;  // watchdog on |gamma_k * xi_k|
};

struct CloglogDesign {
  Matrix x;
  std::vector<std::string> names;          // optional, per column
  std::vector<std::size_t> dummy_columns;  // time-dummy columns, for starts
};

struct SecondStageFit {
  std::vector<double> gamma;            // over kept design columns
  std::vector<std::size_t> kept;        // indices into the input design
  std::vector<std::string> kept_names;
  double loglik = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  std::string convergence_reason;
  RankReport screening;
  std::vector<std::size_t> dropped_collinear;   // input column indices
  std::vector<std::size_t> dropped_separated;   // perfect predictors
  std::vector<std::string> warnings;
  std::vector<double> loglik_path;              // accepted iterations
  CloglogWeights weights;                       // at the solution
};

// Newton maximization with step halving.  Starting values put the
// method-of-moments baseline on the time dummies and zero elsewhere.
SecondStageFit fit_cloglog(const CloglogDesign& design, std::span<const int> y,
                           const CloglogOptions& options = {});

// Convenience wrapper for the untransformed model: design is
// [time dummies | exog | endog | control function columns].
SecondStageFit fit_cloglog(const EstimationFrame& frame, const CfBlock& cf,
                           const CloglogOptions& options = {});

}  // namespace ivhazard
