#include "ivhazard/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace ivhazard {

namespace {

constexpr std::size_t kLeafRows = 256;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Fixed block-recursive accumulation over [0, nrows): leaves of at most
// kLeafRows rows are accumulated in row order, then partial results are
// combined pairwise.  The reduction tree depends only on nrows.
template <typename LeafFn>
Matrix reduce_rows(std::size_t nrows, std::size_t out_rows,
                   std::size_t out_cols, const LeafFn& leaf) {
  struct Rec {
    const LeafFn& leaf;
    std::size_t out_rows, out_cols;
    Matrix run(std::size_t lo, std::size_t hi) const {
      if (hi - lo <= kLeafRows) {
        Matrix acc(out_rows, out_cols);
        leaf(lo, hi, acc);
        return acc;
      }
      std::size_t mid = lo + (hi - lo) / 2;
      Matrix left = run(lo, mid);
      left += run(mid, hi);
      return left;
    }
  };
  return Rec{leaf, out_rows, out_cols}.run(0, nrows);
}

void mirror_upper(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = i + 1; j < m.cols(); ++j) m(j, i) = m(i, j);
}

}  // namespace

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transpose() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw std::invalid_argument("matrix addition: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  if (rows_ != other.rows_ || cols_ != other.cols_)
    throw std::invalid_argument("matrix subtraction: shape mismatch");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) v *= s;
  return *this;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols_ != b.rows_)
    throw std::invalid_argument("matrix product: shape mismatch");
  Matrix c(a.rows_, b.cols_);
  for (std::size_t i = 0; i < a.rows_; ++i) {
    for (std::size_t k = 0; k < a.cols_; ++k) {
      double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * b.cols_;
      double* crow = c.data() + i * c.cols_;
      for (std::size_t j = 0; j < b.cols_; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix operator+(Matrix a, const Matrix& b) {
  a += b;
  return a;
}

Matrix operator-(Matrix a, const Matrix& b) {
  a -= b;
  return a;
}

std::vector<double> mat_vec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size())
    throw std::invalid_argument("mat_vec: shape mismatch");
  std::vector<double> y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

std::vector<double> mat_tvec(const Matrix& a, std::span<const double> x) {
  if (a.rows() != x.size())
    throw std::invalid_argument("mat_tvec: shape mismatch");
  Matrix acc = reduce_rows(
      a.rows(), 1, a.cols(),
      [&](std::size_t lo, std::size_t hi, Matrix& out) {
        for (std::size_t i = lo; i < hi; ++i) {
          auto r = a.row(i);
          for (std::size_t j = 0; j < a.cols(); ++j) out(0, j) += x[i] * r[j];
        }
      });
  return {acc.data(), acc.data() + a.cols()};
}

Matrix gram(const Matrix& x) {
  Matrix g = reduce_rows(
      x.rows(), x.cols(), x.cols(),
      [&](std::size_t lo, std::size_t hi, Matrix& out) {
        for (std::size_t i = lo; i < hi; ++i) {
          auto r = x.row(i);
          for (std::size_t j = 0; j < x.cols(); ++j) {
            if (r[j] == 0.0) continue;
            for (std::size_t k = j; k < x.cols(); ++k)
              out(j, k) += r[j] * r[k];
          }
        }
      });
  mirror_upper(g);
  return g;
}

Matrix weighted_gram(const Matrix& x, std::span<const double> w) {
  if (x.rows() != w.size())
    throw std::invalid_argument("weighted_gram: shape mismatch");
  Matrix g = reduce_rows(
      x.rows(), x.cols(), x.cols(),
      [&](std::size_t lo, std::size_t hi, Matrix& out) {
        for (std::size_t i = lo; i < hi; ++i) {
          auto r = x.row(i);
          for (std::size_t j = 0; j < x.cols(); ++j) {
            double wj = w[i] * r[j];
            if (wj == 0.0) continue;
            for (std::size_t k = j; k < x.cols(); ++k) out(j, k) += wj * r[k];
          }
        }
      });
  mirror_upper(g);
  return g;
}

Matrix cross(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw std::invalid_argument("cross: shape mismatch");
  return reduce_rows(a.rows(), a.cols(), b.cols(),
                     [&](std::size_t lo, std::size_t hi, Matrix& out) {
                       for (std::size_t i = lo; i < hi; ++i) {
                         auto ra = a.row(i);
                         auto rb = b.row(i);
                         for (std::size_t j = 0; j < a.cols(); ++j) {
                           if (ra[j] == 0.0) continue;
                           for (std::size_t k = 0; k < b.cols(); ++k)
                             out(j, k) += ra[j] * rb[k];
                         }
                       }
                     });
}

Matrix weighted_cross(const Matrix& a, std::span<const double> w,
                      const Matrix& b) {
  if (a.rows() != b.rows() || a.rows() != w.size())
    throw std::invalid_argument("weighted_cross: shape mismatch");
  return reduce_rows(a.rows(), a.cols(), b.cols(),
                     [&](std::size_t lo, std::size_t hi, Matrix& out) {
                       for (std::size_t i = lo; i < hi; ++i) {
                         auto ra = a.row(i);
                         auto rb = b.row(i);
                         for (std::size_t j = 0; j < a.cols(); ++j) {
                           double wj = w[i] * ra[j];
                           if (wj == 0.0) continue;
                           for (std::size_t k = 0; k < b.cols(); ++k)
                             out(j, k) += wj * rb[k];
                         }
                       }
                     });
}

std::vector<double> weighted_column_sums(const Matrix& x,
                                         std::span<const double> w) {
  if (x.rows() != w.size())
    throw std::invalid_argument("weighted_column_sums: shape mismatch");
  Matrix acc = reduce_rows(
      x.rows(), 1, x.cols(),
      [&](std::size_t lo, std::size_t hi, Matrix& out) {
        for (std::size_t i = lo; i < hi; ++i) {
          auto r = x.row(i);
          for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += w[i] * r[j];
        }
      });
  return {acc.data(), acc.data() + x.cols()};
}

double pairwise_sum(std::span<const double> v) {
  Matrix acc = reduce_rows(v.size(), 1, 1,
                           [&](std::size_t lo, std::size_t hi, Matrix& out) {
                             for (std::size_t i = lo; i < hi; ++i)
                               out(0, 0) += v[i];
                           });
  return acc(0, 0);
}

Matrix select_columns(const Matrix& m, std::span<const std::size_t> cols) {
  Matrix out(m.rows(), cols.size());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      if (cols[j] >= m.cols())
        throw std::invalid_argument("select_columns: index out of range");
      out(i, j) = r[cols[j]];
    }
  }
  return out;
}

double default_rank_tolerance() {
  return std::pow(std::numeric_limits<double>::epsilon(), 2.0 / 3.0);
}

RankReport pivoted_rank(const Matrix& m, double rel_tol) {
  if (rel_tol < 0.0 || !std::isfinite(rel_tol))
    throw std::invalid_argument("pivoted_rank: rel_tol must be nonnegative");
  const std::size_t n = m.rows();
  const std::size_t p = m.cols();
  RankReport rep;
  rep.pivot_magnitudes.assign(p, 0.0);
  std::vector<std::vector<double>> basis;  // orthonormal, kept columns
  double max_pivot = 0.0;
  std::vector<double> v(n);
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t i = 0; i < n; ++i) v[i] = m(i, k);
    // Two orthogonalization passes keep the residual accurate even when the
    // column is nearly dependent on the basis.
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : basis) {
        double c = dot(q, v);
        for (std::size_t i = 0; i < n; ++i) v[i] -= c * q[i];
      }
    }
    double norm = std::sqrt(dot(v, v));
    rep.pivot_magnitudes[k] = norm;
    double cand_max = std::max(max_pivot, norm);
    if (norm <= rel_tol * cand_max) {
      rep.dropped_columns.push_back(k);
    } else {
      rep.kept_columns.push_back(k);
      max_pivot = cand_max;
      std::vector<double> q(v);
      for (double& qi : q) qi /= norm;
      basis.push_back(std::move(q));
    }
  }
  rep.rank = rep.kept_columns.size();
  return rep;
}

RankReport pivoted_rank(const Matrix& m) {
  return pivoted_rank(m, default_rank_tolerance());
}

double default_solve_tolerance() { return 1e-12; }

LdltFactor::LdltFactor(const Matrix& a, double zero_tol, std::string context)
    : n_(a.rows()), l_(a.rows(), a.rows()), d_(a.rows(), 0.0) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("LdltFactor: matrix must be square");
  if (zero_tol < 0.0 || !std::isfinite(zero_tol))
    throw std::invalid_argument("LdltFactor: zero_tol must be nonnegative");
  if (context.empty()) context = "spd solve";
  double max_diag = 0.0;
  for (std::size_t j = 0; j < n_; ++j)
    max_diag = std::max(max_diag, std::abs(a(j, j)));
  for (std::size_t k = 0; k < n_; ++k) {
    double dk = a(k, k);
    for (std::size_t j = 0; j < k; ++j) dk -= l_(k, j) * l_(k, j) * d_[j];
    bool bad = !std::isfinite(dk);
    if (!bad)
      bad = (zero_tol == 0.0) ? (dk == 0.0)
                              : (std::abs(dk) <= zero_tol * max_diag);
    if (bad) {
      throw SingularMatrixError(
          k, context + ": singular at pivot " + std::to_string(k + 1) +
                 " of " + std::to_string(n_) + " (pivot " +
                 std::to_string(dk) + ", threshold " +
                 std::to_string(zero_tol * max_diag) +
                 (zero_tol == 0.0 ? ", zero-tolerance mode" : "") + ")");
    }
    d_[k] = dk;
    l_(k, k) = 1.0;
    for (std::size_t i = k + 1; i < n_; ++i) {
      double s = a(i, k);
      for (std::size_t j = 0; j < k; ++j) s -= l_(i, j) * l_(k, j) * d_[j];
      l_(i, k) = s / dk;
    }
  }
}

void LdltFactor::solve_in_place(std::span<double> b) const {
  if (b.size() != n_)
    throw std::invalid_argument("LdltFactor::solve: shape mismatch");
  for (std::size_t i = 0; i < n_; ++i) {
    double s = b[i];
    for (std::size_t j = 0; j < i; ++j) s -= l_(i, j) * b[j];
    b[i] = s;
  }
  for (std::size_t i = 0; i < n_; ++i) b[i] /= d_[i];
  for (std::size_t ii = n_; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t j = ii + 1; j < n_; ++j) s -= l_(j, ii) * b[j];
    b[ii] = s;
  }
}

std::vector<double> LdltFactor::solve(std::span<const double> b) const {
  std::vector<double> x(b.begin(), b.end());
  solve_in_place(x);
  return x;
}

Matrix LdltFactor::solve(const Matrix& b) const {
  if (b.rows() != n_)
    throw std::invalid_argument("LdltFactor::solve: shape mismatch");
  Matrix x = b;
  std::vector<double> col(n_);
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < n_; ++i) col[i] = x(i, j);
    solve_in_place(col);
    for (std::size_t i = 0; i < n_; ++i) x(i, j) = col[i];
  }
  return x;
}

std::vector<double> solve_spd(const Matrix& a, std::span<const double> b,
                              double zero_tol) {
  return LdltFactor(a, zero_tol).solve(b);
}

Matrix solve_spd(const Matrix& a, const Matrix& b, double zero_tol) {
  return LdltFactor(a, zero_tol).solve(b);
}

std::vector<double> least_squares(const Matrix& a, std::span<const double> b) {
  const std::size_t n = a.rows();
  const std::size_t p = a.cols();
  if (b.size() != n)
    throw std::invalid_argument("least_squares: shape mismatch");
  if (n < p)
    throw std::invalid_argument("least_squares: fewer rows than columns");
  Matrix r = a;
  std::vector<double> qtb(b.begin(), b.end());
  for (std::size_t k = 0; k < p; ++k) {
    double norm2 = 0.0;
    for (std::size_t i = k; i < n; ++i) norm2 += r(i, k) * r(i, k);
    double norm = std::sqrt(norm2);
    if (norm == 0.0)
      throw SingularMatrixError(
          k, "least squares: column " + std::to_string(k + 1) +
                 " is exactly dependent on preceding columns");
    double alpha = (r(k, k) > 0.0) ? -norm : norm;
    double v0 = r(k, k) - alpha;
    // Householder vector is (v0, r(k+1..n-1, k)); scale 2/v'v.
    double vtv = v0 * v0;
    for (std::size_t i = k + 1; i < n; ++i) vtv += r(i, k) * r(i, k);
    double w = 2.0 / vtv;
    for (std::size_t j = k + 1; j < p; ++j) {
      double s = v0 * r(k, j);
      for (std::size_t i = k + 1; i < n; ++i) s += r(i, k) * r(i, j);
      s *= w;
      r(k, j) -= s * v0;
      for (std::size_t i = k + 1; i < n; ++i) r(i, j) -= s * r(i, k);
    }
    {
      double s = v0 * qtb[k];
      for (std::size_t i = k + 1; i < n; ++i) s += r(i, k) * qtb[i];
      s *= w;
      qtb[k] -= s * v0;
      for (std::size_t i = k + 1; i < n; ++i) qtb[i] -= s * r(i, k);
    }
    r(k, k) = alpha;
  }
  std::vector<double> x(p);
  for (std::size_t ii = p; ii-- > 0;) {
    double s = qtb[ii];
    for (std::size_t j = ii + 1; j < p; ++j) s -= r(ii, j) * x[j];
    if (r(ii, ii) == 0.0)
      throw SingularMatrixError(ii, "least squares: zero diagonal in R");
    x[ii] = s / r(ii, ii);
  }
  return x;
}

}  // namespace ivhazard
