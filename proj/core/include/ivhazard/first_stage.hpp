#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ivhazard/linalg.hpp"
#include "ivhazard/panel.hpp"

namespace ivhazard {

struct FirstStageOptions {
  // Collinearity screening tolerance; negative means default_rank_tolerance().
  double rank_tol = -1.0;
  // Optional per-equation excluded-instrument subsets, one entry per
  // endogenous regressor, each listing indices into the frame's instrument
  // columns.  Empty means every equation uses all excluded instruments.
  std::vector<std::vector<std::size_t>> instrument_subsets;
};

// Per-equation OLS of each endogenous regressor on the stacked instrument
// set [time dummies | exogenous regressors | excluded instruments].  The
// included block (dummies + exogenous) is screened first, so collinearity is
// always resolved by dropping excluded instruments rather than included
// regressors.
struct FirstStageFit {
  Matrix z;                           // kept instrument columns
  std::vector<std::string> z_names;   // one per kept column
  std::size_t n_included = 0;         // leading kept columns that are included
  RankReport screening;               // over the unscreened stacked layout
  std::vector<std::string> screening_names;
  std::vector<std::string> warnings;  // human-readable screening notes

  struct Equation {
    std::string name;                  // endogenous regressor
    std::vector<std::size_t> columns;  // indices into z
    std::vector<double> pi;            // aligned with columns
    double sigma2 = 0.0;               // residual variance, RSS / n_rows
    double f_excluded = 0.0;           // F statistic on excluded instruments
    std::size_t n_excluded = 0;        // excluded instruments in this equation
  };
  std::vector<Equation> equations;
  Matrix residuals;  // n_rows x n_equations

  std::size_t stacked_dim() const {
    std::size_t p = 0;
    for (const auto& e : equations) p += e.columns.size();
    return p;
  }
  // Coefficients padded to the kept-column layout, one column per equation.
  Matrix pi_matrix() const;
};

FirstStageFit fit_first_stage(const EstimationFrame& frame,
                              const FirstStageOptions& options = {});

// Entity-level moment contributions sum_t z_it v_it, equations stacked in
// order; columns follow each equation's `columns` layout.
Matrix first_stage_score(const FirstStageFit& fit,
                         const EstimationFrame& frame);

}  // namespace ivhazard
