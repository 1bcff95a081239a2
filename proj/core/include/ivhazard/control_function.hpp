#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ivhazard/linalg.hpp"

namespace ivhazard {

enum class CfForm {
  separate,  // per-residual powers v_j, v_j^2, ..., v_j^Q
  full,      // all cross products of total degree 1..Q
};

struct ControlFunctionSpec {
  std::size_t order = 1;  // Q, highest polynomial degree
  CfForm form = CfForm::separate;
};

// One polynomial term: exponents[j] is the power on residual j.
struct CfTerm {
  std::vector<unsigned> exponents;
  unsigned degree() const {
    unsigned g = 0;
    for (unsigned e : exponents) g += e;
    return g;
  }
  std::string label() const;  // cf_v1, cf_v1^2, cf_v1*v2, ...
};

// Term layout for a given residual count.  separate: grouped by residual,
// ascending power.  full: ascending total degree, lexicographic within.
std::vector<CfTerm> cf_terms(std::size_t n_residuals,
                             const ControlFunctionSpec& spec);

struct CfBlock {
  Matrix columns;             // one column per term
  std::vector<CfTerm> terms;
};

CfBlock build_cf(const Matrix& residuals, const ControlFunctionSpec& spec);

double cf_monomial(std::span<const double> v, const CfTerm& term);
// Partial derivative of the monomial with respect to v_j.
double cf_monomial_partial(std::span<const double> v, const CfTerm& term,
                           std::size_t j);

// Gradient of c(v) = sum_a beta3[a] * m_a(v) with respect to v; the power
// rule applies, so a term v_j^q contributes q * beta3 * v_j^(q-1) to entry j.
std::vector<double> cf_gradient_factor(std::span<const double> v,
                                       std::span<const double> beta3,
                                       const std::vector<CfTerm>& terms);

}  // namespace ivhazard
