#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ivhazard/errors.hpp"

namespace ivhazard {

// Dense row-major matrix.  Dimensions here are parameter-sized (tens of
// columns); rows run over person-period observations.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  std::span<double> row(std::size_t i) {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  Matrix transpose() const;
  bool all_finite() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend Matrix operator*(const Matrix& a, const Matrix& b);
  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);

// y = A x and y = A' x for vector x.
std::vector<double> mat_vec(const Matrix& a, std::span<const double> x);
std::vector<double> mat_tvec(const Matrix& a, std::span<const double> x);

// Observation-dimension reductions.  All of these accumulate row
// contributions with a fixed pairwise (block-recursive) summation order, so
// results are reproducible bit for bit regardless of how callers schedule
// surrounding work.
Matrix gram(const Matrix& x);                                   // X'X
Matrix weighted_gram(const Matrix& x, std::span<const double> w);  // X'diag(w)X
Matrix cross(const Matrix& a, const Matrix& b);                 // A'B
Matrix weighted_cross(const Matrix& a, std::span<const double> w,
                      const Matrix& b);                         // A'diag(w)B
std::vector<double> weighted_column_sums(const Matrix& x,
                                         std::span<const double> w);  // X'w
double pairwise_sum(std::span<const double> v);

Matrix select_columns(const Matrix& m, std::span<const std::size_t> cols);

// Greedy left-to-right collinearity screen.  Column k's pivot magnitude is
// the Euclidean norm of its residual after orthogonalization against every
// column kept so far; the column is dropped when that magnitude is at or
// below rel_tol times the largest pivot seen up to and including column k.
// Ties therefore always resolve in favor of the earlier column.  With
// rel_tol == 0 only exactly zero residuals are dropped.
struct RankReport {
  std::size_t rank = 0;
  std::vector<std::size_t> kept_columns;     // ascending
  std::vector<std::size_t> dropped_columns;  // ascending
  std::vector<double> pivot_magnitudes;      // one per input column
};

double default_rank_tolerance();  // eps^(2/3)

RankReport pivoted_rank(const Matrix& m, double rel_tol);
RankReport pivoted_rank(const Matrix& m);

// LDL' factorization of a symmetric positive definite matrix, without
// pivoting.  zero_tol > 0: a pivot whose magnitude is at or below
// zero_tol * max_j |A_jj| raises SingularMatrixError.  zero_tol == 0: only an
// exactly zero (or non-finite) pivot raises; anything else is used as-is,
// which deliberately lets severely ill-conditioned systems through.
class LdltFactor {
 public:
  LdltFactor(const Matrix& a, double zero_tol, std::string context = {});

  std::vector<double> solve(std::span<const double> b) const;
  Matrix solve(const Matrix& b) const;
  void solve_in_place(std::span<double> b) const;
  std::size_t dim() const noexcept { return n_; }

 private:
  std::size_t n_ = 0;
  Matrix l_;
  std::vector<double> d_;
};

double default_solve_tolerance();  // 1e-12

std::vector<double> solve_spd(const Matrix& a, std::span<const double> b,
                              double zero_tol);
Matrix solve_spd(const Matrix& a, const Matrix& b, double zero_tol);

// Least squares via unpivoted Householder QR.  Callers are expected to have
// screened collinear columns already; an exactly dependent column still
// raises SingularMatrixError.
std::vector<double> least_squares(const Matrix& a, std::span<const double> b);

}  // namespace ivhazard
