#pragma once

// Shared oracles and fixture builders for the test suite.  Everything here
// is deliberately independent of the library's own numerics: finite
// differences, Jacobi eigenvalues, and Gauss-Jordan inversion are the
// arbiters the analytic code is checked against.

#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <ivhazard/linalg.hpp>
#include <ivhazard/panel.hpp>

namespace test_support {

using ivhazard::Matrix;

// Central difference with one Richardson extrapolation step (4th order).
inline double fd_derivative(const std::function<double(double)>& f, double x,
                            double h) {
  auto central = [&](double step) {
    return (f(x + step) - f(x - step)) / (2.0 * step);
  };
  double d1 = central(h);
  double d2 = central(h / 2.0);
  return (4.0 * d2 - d1) / 3.0;
}

inline double rel_err(double got, double want, double floor = 1e-12) {
  return std::abs(got - want) / std::max(std::abs(want), floor);
}

// Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.
inline std::vector<double> jacobi_eigenvalues(Matrix a, int max_sweeps = 60) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("jacobi_eigenvalues: square matrix required");
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-26 * static_cast<double>(n * n)) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a(i, i);
  return eig;
}

// Dense inverse by Gauss-Jordan with partial pivoting (solve oracle).
inline Matrix gauss_jordan_inverse(Matrix a) {
  if (a.rows() != a.cols())
    throw std::invalid_argument("gauss_jordan_inverse: square required");
  const std::size_t n = a.rows();
  Matrix inv = Matrix::identity(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (a(piv, col) == 0.0)
      throw std::runtime_error("gauss_jordan_inverse: singular");
    if (piv != col)
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a(col, c), a(piv, c));
        std::swap(inv(col, c), inv(piv, c));
      }
    double d = a(col, col);
    for (std::size_t c = 0; c < n; ++c) {
      a(col, c) /= d;
      inv(col, c) /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      double m = a(r, col);
      if (m == 0.0) continue;
      for (std::size_t c = 0; c < n; ++c) {
        a(r, c) -= m * a(col, c);
        inv(r, c) -= m * inv(col, c);
      }
    }
  }
  return inv;
}

// Determinant of the Gram matrix m'm (rank oracle for small column sets).
inline double gram_determinant(const Matrix& m) {
  Matrix g(m.cols(), m.cols());
  for (std::size_t i = 0; i < m.cols(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < m.rows(); ++r) s += m(r, i) * m(r, j);
      g(i, j) = s;
    }
  // LU determinant.
  const std::size_t n = g.rows();
  double det = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(g(r, col)) > std::abs(g(piv, col))) piv = r;
    if (g(piv, col) == 0.0) return 0.0;
    if (piv != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(g(col, c), g(piv, c));
      det = -det;
    }
    det *= g(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      double m2 = g(r, col) / g(col, col);
      for (std::size_t c = col; c < n; ++c) g(r, c) -= m2 * g(col, c);
    }
  }
  return det;
}

// Small hand-built panel: CSV text -> PanelDataset through the real loader.
inline ivhazard::PanelDataset panel_from_csv(
    const std::string& csv, const ivhazard::CsvSchema& schema,
    ivhazard::TruncationPolicy policy = ivhazard::TruncationPolicy::reject) {
  std::istringstream in(csv);
  return ivhazard::load_panel(in, schema, policy);
}

inline ivhazard::CsvSchema basic_schema() {
  ivhazard::CsvSchema s;
  s.entity = "entity";
  s.time = "time";
  s.fail = "fail";
  s.endog = {"x1"};
  s.exog = {"w1"};
  s.instruments = {"z1", "z2"};
  return s;
}

}  // namespace test_support
