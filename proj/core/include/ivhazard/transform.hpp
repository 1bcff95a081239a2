#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ivhazard/linalg.hpp"

namespace ivhazard {

// Deterministic transforms of the endogenous regressors used as second-stage
// regressors.  Grammar, with NAME an endogenous column name:
//   EXPR      := INDICATOR | PRODUCT
//   INDICATOR := NAME ('>' | '<') NUMBER
//   PRODUCT   := POWER ('*' POWER)*
//   POWER     := NAME ('^' UINT)?
struct RegressorTransform {
  enum class Kind { power_product, indicator };

  std::string source;  // original expression, used as the column label
  Kind kind = Kind::power_product;
  // power_product: (endogenous column index, positive power) factors.
  std::vector<std::pair<std::size_t, unsigned>> factors;
  // indicator: 1(x[var] > threshold) or 1(x[var] < threshold).
  std::size_t var = 0;
  bool greater = true;
  double threshold = 0.0;

  double eval(std::span<const double> x) const;
};

RegressorTransform parse_transform(const std::string& expr,
                                   const std::vector<std::string>& names);

// Identity transform for every endogenous column.
std::vector<RegressorTransform> identity_transforms(
    const std::vector<std::string>& names);

Matrix apply_transforms(const Matrix& x_endog,
                        const std::vector<RegressorTransform>& transforms);

}  // namespace ivhazard
