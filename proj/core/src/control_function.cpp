#include "ivhazard/control_function.hpp"

#include <stdexcept>

#include "ivhazard/errors.hpp"

namespace ivhazard {

std::string CfTerm::label() const {
  std::string s = "cf_";
  bool first = true;
  for (std::size_t j = 0; j < exponents.size(); ++j) {
    if (exponents[j] == 0) continue;
    if (!first) s += '*';
    s += "v" + std::to_string(j + 1);
    if (exponents[j] > 1) s += "^" + std::to_string(exponents[j]);
    first = false;
  }
  return s;
}

namespace {

void enumerate_degree(std::size_t pos, unsigned remaining,
                      std::vector<unsigned>& exps,
                      std::vector<CfTerm>& out) {
  if (pos + 1 == exps.size()) {
    exps[pos] = remaining;
    out.push_back(CfTerm{exps});
    return;
  }
  for (unsigned e = remaining; e + 1 != 0; --e) {
    exps[pos] = e;
    enumerate_degree(pos + 1, remaining - e, exps, out);
  }
  exps[pos] = 0;
}

}  // namespace

std::vector<CfTerm> cf_terms(std::size_t n_residuals,
                             const ControlFunctionSpec& spec) {
  if (spec.order < 1)
    throw UsageError("control function order must be at least 1");
  if (n_residuals == 0)
    throw UsageError("control function needs at least one residual column");
  std::vector<CfTerm> terms;
  if (spec.form == CfForm::separate) {
    for (std::size_t j = 0; j < n_residuals; ++j) {
      for (unsigned q = 1; q <= spec.order; ++q) {
        CfTerm t;
        t.exponents.assign(n_residuals, 0);
        t.exponents[j] = q;
        terms.push_back(std::move(t));
      }
    }
  } else {
    std::vector<unsigned> exps(n_residuals, 0);
    for (unsigned g = 1; g <= spec.order; ++g)
      enumerate_degree(0, g, exps, terms);
  }
  return terms;
}

CfBlock build_cf(const Matrix& residuals, const ControlFunctionSpec& spec) {
  CfBlock block;
  block.terms = cf_terms(residuals.cols(), spec);
  block.columns = Matrix(residuals.rows(), block.terms.size());
  for (std::size_t i = 0; i < residuals.rows(); ++i) {
    auto v = residuals.row(i);
    for (std::size_t a = 0; a < block.terms.size(); ++a)
      block.columns(i, a) = cf_monomial(v, block.terms[a]);
  }
  return block;
}

double cf_monomial(std::span<const double> v, const CfTerm& term) {
  if (v.size() != term.exponents.size())
    throw std::invalid_argument("cf_monomial: dimension mismatch");
  double m = 1.0;
  for (std::size_t j = 0; j < v.size(); ++j)
    for (unsigned e = 0; e < term.exponents[j]; ++e) m *= v[j];
  return m;
}

double cf_monomial_partial(std::span<const double> v, const CfTerm& term,
                           std::size_t j) {
  if (v.size() != term.exponents.size())
    throw std::invalid_argument("cf_monomial_partial: dimension mismatch");
  if (j >= v.size())
    throw std::invalid_argument("cf_monomial_partial: index out of range");
  unsigned ej = term.exponents[j];
  if (ej == 0) return 0.0;
  double m = static_cast<double>(ej);
  for (unsigned e = 0; e + 1 < ej; ++e) m *= v[j];
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k == j) continue;
    for (unsigned e = 0; e < term.exponents[k]; ++e) m *= v[k];
  }
  return m;
}

std::vector<double> cf_gradient_factor(std::span<const double> v,
                                       std::span<const double> beta3,
                                       const std::vector<CfTerm>& terms) {
  if (beta3.size() != terms.size())
    throw std::invalid_argument(
        "cf_gradient_factor: one coefficient per term required");
  std::vector<double> grad(v.size(), 0.0);
  for (std::size_t a = 0; a < terms.size(); ++a) {
    if (beta3[a] == 0.0) continue;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (terms[a].exponents[j] == 0) continue;
      grad[j] += beta3[a] * cf_monomial_partial(v, terms[a], j);
    }
  }
  return grad;
}

}  // namespace ivhazard
