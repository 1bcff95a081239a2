#include "ivhazard/transform.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>

#include "ivhazard/errors.hpp"

namespace ivhazard {

namespace {

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::size_t lookup(const std::string& name,
                   const std::vector<std::string>& names,
                   const std::string& expr) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) {
    std::string known;
    for (const auto& n : names) {
      if (!known.empty()) known += ", ";
      known += n;
    }
    throw UsageError("transform '" + expr + "': unknown endogenous "
                     "regressor '" + name + "' (known: " + known + ")");
  }
  return static_cast<std::size_t>(it - names.begin());
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return parts;
}

}  // namespace

double RegressorTransform::eval(std::span<const double> x) const {
  if (kind == Kind::indicator) {
    double v = x[var];
    return (greater ? v > threshold : v < threshold) ? 1.0 : 0.0;
  }
  double m = 1.0;
  for (const auto& [idx, pow] : factors)
    for (unsigned e = 0; e < pow; ++e) m *= x[idx];
  return m;
}

RegressorTransform parse_transform(const std::string& expr,
                                   const std::vector<std::string>& names) {
  RegressorTransform t;
  t.source = strip(expr);
  if (t.source.empty()) throw UsageError("transform expression is empty");
  std::size_t cmp = t.source.find_first_of("<>");
  if (cmp != std::string::npos) {
    t.kind = RegressorTransform::Kind::indicator;
    t.greater = (t.source[cmp] == '>');
    std::string lhs = strip(t.source.substr(0, cmp));
    std::string rhs = strip(t.source.substr(cmp + 1));
    if (lhs.empty() || rhs.empty())
      throw UsageError("transform '" + expr + "': expected NAME " +
                       (t.greater ? ">" : "<") + " NUMBER");
    t.var = lookup(lhs, names, expr);
    double thr = 0.0;
    auto [ptr, ec] = std::from_chars(rhs.data(), rhs.data() + rhs.size(), thr);
    if (ec != std::errc{} || ptr != rhs.data() + rhs.size())
      throw UsageError("transform '" + expr + "': cannot parse threshold '" +
                       rhs + "'");
    t.threshold = thr;
    return t;
  }
  t.kind = RegressorTransform::Kind::power_product;
  for (const std::string& raw : split_on(t.source, '*')) {
    std::string factor = strip(raw);
    if (factor.empty())
      throw UsageError("transform '" + expr + "': empty factor");
    unsigned power = 1;
    std::size_t caret = factor.find('^');
    std::string name = factor;
    if (caret != std::string::npos) {
      name = strip(factor.substr(0, caret));
      std::string ps = strip(factor.substr(caret + 1));
      unsigned p = 0;
      auto [ptr, ec] = std::from_chars(ps.data(), ps.data() + ps.size(), p);
      if (ec != std::errc{} || ptr != ps.data() + ps.size() || p == 0)
        throw UsageError("transform '" + expr + "': power '" + ps +
                         "' must be a positive integer");
      power = p;
    }
    t.factors.emplace_back(lookup(name, names, expr), power);
  }
  return t;
}

std::vector<RegressorTransform> identity_transforms(
    const std::vector<std::string>& names) {
  std::vector<RegressorTransform> out;
  for (std::size_t j = 0; j < names.size(); ++j) {
    RegressorTransform t;
    t.source = names[j];
    t.kind = RegressorTransform::Kind::power_product;
    t.factors.emplace_back(j, 1u);
    out.push_back(std::move(t));
  }
  return out;
}

Matrix apply_transforms(const Matrix& x_endog,
                        const std::vector<RegressorTransform>& transforms) {
  Matrix out(x_endog.rows(), transforms.size());
  for (std::size_t i = 0; i < x_endog.rows(); ++i) {
    auto xr = x_endog.row(i);
    for (std::size_t j = 0; j < transforms.size(); ++j)
      out(i, j) = transforms[j].eval(xr);
  }
  return out;
}

}  // namespace ivhazard
