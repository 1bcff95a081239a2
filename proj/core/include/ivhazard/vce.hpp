#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ivhazard/control_function.hpp"
#include "ivhazard/first_stage.hpp"
#include "ivhazard/linalg.hpp"
#include "ivhazard/panel.hpp"

namespace ivhazard {

// Everything the stacked-moment machinery needs about a fitted two-stage
// model.  xi holds the kept second-stage design; cf_term_of_col maps each of
// its columns to an entry of cf_terms_kept (or -1 for non-CF columns), and
// beta3 holds the fitted coefficient for each kept CF term.
struct StackedModel {
  const EstimationFrame* frame = nullptr;
  const FirstStageFit* first = nullptr;
  Matrix xi;
  std::vector<std::string> xi_names;
  std::vector<double> gamma;
  std::vector<double> w;  // score weights at gamma
  std::vector<double> d;  // Hessian weights at gamma
  std::vector<std::ptrdiff_t> cf_term_of_col;
  std::vector<CfTerm> cf_terms_kept;
  std::vector<double> beta3;  // aligned with cf_terms_kept

  std::size_t first_dim() const { return first->stacked_dim(); }
  std::size_t second_dim() const { return xi.cols(); }
  std::size_t dim() const { return first_dim() + second_dim(); }
  std::vector<std::string> labels() const;
};

// Entity-level stacked moment contributions, one row per entity: first-stage
// blocks sum_t z_it v_it per equation, then the second-stage score
// sum_t w_it xi_it.  Sums are unnormalized.
Matrix stacked_scores(const StackedModel& m);

// The Jacobian of the stacked moment vector.  sample_jacobian differentiates
// the realized moment sums exactly: the lower-left block carries, on control
// function rows, both the curvature term (via the Hessian weights) and a
// score-weighted term from the residual entering the regressors themselves.
// expected omits the score-weighted term, which vanishes in expectation at
// the solution; it is kept for diagnostics and matches the familiar
// plug-in expression.
enum class GForm { sample_jacobian, expected };

struct GAssembly {
  std::vector<Matrix> g11;              // per equation, -Z_j'Z_j
  Matrix g21;                           // second_dim x first_dim
  Matrix g22;                           // xi' D xi
  std::vector<std::size_t> eq_offsets;  // column offset of each equation
  std::size_t first_dim = 0;

  Matrix full() const;  // dense stacked Jacobian (upper-right block is zero)
};

// kronecker exploits identical instrument sets across equations (the
// information block becomes I_kappa (x) Z'Z computed once); it requires every
// equation to use the same columns and is bit-identical to the generic path.
GAssembly build_G(const StackedModel& m, GForm form = GForm::sample_jacobian,
                  bool kronecker = false);

// Clustered outer-product middle matrix: sum over clusters of s_c s_c' where
// s_c sums entity rows.  cluster_of_entity maps entity index -> cluster id
// (0-based, contiguous).  dof_correction applies c/(c-1).
Matrix build_Omega(const Matrix& entity_scores,
                   std::span<const std::size_t> cluster_of_entity,
                   bool dof_correction = false);
Matrix build_Omega(const Matrix& entity_scores, bool dof_correction = false);

enum class VceMode { standard, zero_tolerance };

// G^{-1} Omega G^{-T} via block forward substitution on the triangular
// stacked structure; the inverse is never formed.  standard mode polices
// pivots at default_solve_tolerance(); zero_tolerance accepts any nonzero
// pivot and is the escape hatch for hard problems (numerically fragile by
// design).
Matrix sandwich(const GAssembly& g, const Matrix& omega, VceMode mode);

// Second-stage-only variance: G22^{-1} Omega22 G22^{-T} where Omega22 uses
// only the second-stage score block.  This is the conventional clustered
// variance that ignores the estimated first stage.
Matrix second_stage_only_vce(const GAssembly& g, const Matrix& omega,
                             VceMode mode);

// Inverse second-stage information (-G22)^{-1}, the model-based variance.
Matrix information_vce(const GAssembly& g, VceMode mode);

}  // namespace ivhazard
