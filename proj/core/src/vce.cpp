#include "ivhazard/vce.hpp"

#include <algorithm>
#include <cmath>

namespace ivhazard {

namespace {

Matrix block_of(const Matrix& m, std::size_t r0, std::size_t r1,
                std::size_t c0, std::size_t c1) {
  Matrix out(r1 - r0, c1 - c0);
  for (std::size_t i = r0; i < r1; ++i)
    for (std::size_t j = c0; j < c1; ++j) out(i - r0, j - c0) = m(i, j);
  return out;
}

void check_model(const StackedModel& m) {
  if (m.frame == nullptr || m.first == nullptr)
    throw std::invalid_argument("StackedModel: frame and first stage "
                                "required");
  const std::size_t n = m.frame->rows();
  if (m.xi.rows() != n || m.w.size() != n || m.d.size() != n)
    throw std::invalid_argument("StackedModel: row dimension mismatch");
  if (m.gamma.size() != m.xi.cols() ||
      m.cf_term_of_col.size() != m.xi.cols())
    throw std::invalid_argument("StackedModel: column bookkeeping mismatch");
  if (m.beta3.size() != m.cf_terms_kept.size())
    throw std::invalid_argument("StackedModel: beta3 must align with kept "
                                "control function terms");
}

}  // namespace

std::vector<std::string> StackedModel::labels() const {
  std::vector<std::string> out;
  for (const auto& eq : first->equations)
    for (std::size_t c : eq.columns)
      out.push_back("pi[" + eq.name + "]:" + first->z_names[c]);
  for (const auto& nm : xi_names) out.push_back(nm);
  return out;
}

Matrix stacked_scores(const StackedModel& m) {
  check_model(m);
  const EstimationFrame& frame = *m.frame;
  Matrix scores(frame.n_entities(), m.dim());
  Matrix fs = first_stage_score(*m.first, frame);
  for (std::size_t i = 0; i < fs.rows(); ++i)
    for (std::size_t j = 0; j < fs.cols(); ++j) scores(i, j) = fs(i, j);
  const std::size_t off = m.first_dim();
  for (std::size_t r = 0; r < frame.rows(); ++r) {
    std::size_t e = frame.row_entity[r];
    double w = m.w[r];
    auto xr = m.xi.row(r);
    for (std::size_t j = 0; j < m.xi.cols(); ++j)
      scores(e, off + j) += w * xr[j];
  }
  return scores;
}

Matrix GAssembly::full() const {
  std::size_t p = first_dim + g22.rows();
  Matrix g(p, p);
  std::size_t off = 0;
  for (const auto& b : g11) {
    for (std::size_t i = 0; i < b.rows(); ++i)
      for (std::size_t j = 0; j < b.cols(); ++j) g(off + i, off + j) = b(i, j);
    off += b.rows();
  }
  for (std::size_t i = 0; i < g21.rows(); ++i)
    for (std::size_t j = 0; j < g21.cols(); ++j)
      g(first_dim + i, j) = g21(i, j);
  for (std::size_t i = 0; i < g22.rows(); ++i)
    for (std::size_t j = 0; j < g22.cols(); ++j)
      g(first_dim + i, first_dim + j) = g22(i, j);
  return g;
}

GAssembly build_G(const StackedModel& m, GForm form, bool kronecker) {
  check_model(m);
  const EstimationFrame& frame = *m.frame;
  const FirstStageFit& first = *m.first;
  const std::size_t n = frame.rows();
  const std::size_t kappa = first.equations.size();
  const std::size_t lxi = m.xi.cols();

  if (kronecker) {
    for (const auto& eq : first.equations)
      if (eq.columns != first.equations.front().columns)
        throw UsageError("build_G: the Kronecker path requires identical "
                         "instrument sets across equations");
  }

  GAssembly g;
  g.first_dim = first.stacked_dim();
  g.g21 = Matrix(lxi, g.first_dim);
  std::size_t offset = 0;

  // Kronecker shortcut: the per-equation information blocks coincide, so
  // -Z'Z is computed once and reused.
  Matrix shared_block;
  if (kronecker) {
    Matrix zj = select_columns(first.z, first.equations.front().columns);
    shared_block = gram(zj);
    shared_block *= -1.0;
  }

  // Columns of xi that are control function terms, in xi order.
  std::vector<std::size_t> cf_cols;
  for (std::size_t c = 0; c < lxi; ++c)
    if (m.cf_term_of_col[c] >= 0) cf_cols.push_back(c);

  std::vector<double> dcg(n);
  for (std::size_t j = 0; j < kappa; ++j) {
    const auto& eq = first.equations[j];
    g.eq_offsets.push_back(offset);
    Matrix zj = select_columns(first.z, eq.columns);
    if (kronecker) {
      g.g11.push_back(shared_block);
    } else {
      Matrix blk = gram(zj);
      blk *= -1.0;
      g.g11.push_back(std::move(blk));
    }

    // Curvature term: -xi' diag(d * dc/dv_j) Z_j.
    for (std::size_t r = 0; r < n; ++r) {
      auto v = first.residuals.row(r);
      double grad = 0.0;
      for (std::size_t a = 0; a < m.cf_terms_kept.size(); ++a) {
        if (m.beta3[a] == 0.0) continue;
        if (m.cf_terms_kept[a].exponents[j] == 0) continue;
        grad += m.beta3[a] * cf_monomial_partial(v, m.cf_terms_kept[a], j);
      }
      dcg[r] = m.d[r] * grad;
    }
    Matrix term1 = weighted_cross(m.xi, dcg, zj);
    for (std::size_t a = 0; a < lxi; ++a)
      for (std::size_t b = 0; b < eq.columns.size(); ++b)
        g.g21(a, offset + b) = -term1(a, b);

    if (form == GForm::sample_jacobian && !cf_cols.empty()) {
      // Score-weighted term from the residual entering the regressors:
      // row for term alpha gets -sum_it w_it dm_alpha/dv_j z_it'.
      Matrix partials(n, cf_cols.size());
      for (std::size_t r = 0; r < n; ++r) {
        auto v = first.residuals.row(r);
        for (std::size_t c = 0; c < cf_cols.size(); ++c) {
          const CfTerm& term =
              m.cf_terms_kept[m.cf_term_of_col[cf_cols[c]]];
          if (term.exponents[j] != 0)
            partials(r, c) = cf_monomial_partial(v, term, j);
        }
      }
      Matrix term2 = weighted_cross(partials, m.w, zj);
      for (std::size_t c = 0; c < cf_cols.size(); ++c)
        for (std::size_t b = 0; b < eq.columns.size(); ++b)
          g.g21(cf_cols[c], offset + b) -= term2(c, b);
    }
    offset += eq.columns.size();
  }

  g.g22 = weighted_gram(m.xi, m.d);
  return g;
}

Matrix build_Omega(const Matrix& entity_scores,
                   std::span<const std::size_t> cluster_of_entity,
                   bool dof_correction) {
  if (cluster_of_entity.size() != entity_scores.rows())
    throw std::invalid_argument("build_Omega: one cluster per entity "
                                "required");
  std::size_t n_clusters = 0;
  for (std::size_t c : cluster_of_entity)
    n_clusters = std::max(n_clusters, c + 1);
  Matrix cluster_sums(n_clusters, entity_scores.cols());
  for (std::size_t i = 0; i < entity_scores.rows(); ++i) {
    std::size_t c = cluster_of_entity[i];
    auto r = entity_scores.row(i);
    for (std::size_t j = 0; j < entity_scores.cols(); ++j)
      cluster_sums(c, j) += r[j];
  }
  Matrix omega = gram(cluster_sums);
  if (dof_correction) {
    if (n_clusters < 2)
      throw UsageError("build_Omega: the small-sample correction needs at "
                       "least two clusters");
    omega *= static_cast<double>(n_clusters) /
             static_cast<double>(n_clusters - 1);
  }
  return omega;
}

Matrix build_Omega(const Matrix& entity_scores, bool dof_correction) {
  std::vector<std::size_t> ident(entity_scores.rows());
  for (std::size_t i = 0; i < ident.size(); ++i) ident[i] = i;
  return build_Omega(entity_scores, ident, dof_correction);
}

namespace {

// Solves G X = B in place of X using the block triangular structure; fj and
// f2 factor the negated (positive definite) diagonal blocks.
Matrix block_solve(const GAssembly& g, const std::vector<LdltFactor>& fj,
                   const LdltFactor& f2, const Matrix& b) {
  const std::size_t p1 = g.first_dim;
  const std::size_t p2 = g.g22.rows();
  Matrix x(p1 + p2, b.cols());
  std::size_t off = 0;
  for (std::size_t j = 0; j < g.g11.size(); ++j) {
    std::size_t lj = g.g11[j].rows();
    Matrix bj = block_of(b, off, off + lj, 0, b.cols());
    Matrix xj = fj[j].solve(bj);
    for (std::size_t i = 0; i < lj; ++i)
      for (std::size_t c = 0; c < b.cols(); ++c) x(off + i, c) = -xj(i, c);
    off += lj;
  }
  Matrix rhs = block_of(b, p1, p1 + p2, 0, b.cols());
  Matrix x1 = block_of(x, 0, p1, 0, b.cols());
  rhs -= g.g21 * x1;
  Matrix x2 = f2.solve(rhs);
  for (std::size_t i = 0; i < p2; ++i)
    for (std::size_t c = 0; c < b.cols(); ++c) x(p1 + i, c) = -x2(i, c);
  return x;
}

std::vector<LdltFactor> factor_first_blocks(const GAssembly& g,
                                            double zero_tol) {
  std::vector<LdltFactor> fj;
  for (std::size_t j = 0; j < g.g11.size(); ++j) {
    Matrix pos = g.g11[j];
    pos *= -1.0;
    try {
      fj.emplace_back(pos, zero_tol,
                      "first-stage information block " + std::to_string(j + 1));
    } catch (const SingularMatrixError& e) {
      throw SingularMatrixError(
          e.pivot_index(),
          std::string(e.what()) +
              "; the stacked Jacobian is invertible whenever the screened "
              "instrument set has full rank, so this indicates residual "
              "collinearity - inspect with --dump-matrices or force the "
              "zero-tolerance solve with --difficult-vce");
    }
  }
  return fj;
}

LdltFactor factor_second_block(const GAssembly& g, double zero_tol) {
  Matrix pos = g.g22;
  pos *= -1.0;
  try {
    return LdltFactor(pos, zero_tol, "second-stage curvature block");
  } catch (const SingularMatrixError& e) {
    throw SingularMatrixError(
        e.pivot_index(),
        std::string(e.what()) +
            "; the stacked Jacobian is invertible whenever the augmented "
            "regressor set has full rank, so this indicates residual "
            "collinearity or an extreme scale mismatch - inspect with "
            "--dump-matrices or force the zero-tolerance solve with "
            "--difficult-vce");
  }
}

void symmetrize(Matrix& v) {
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = i + 1; j < v.cols(); ++j) {
      double m = 0.5 * (v(i, j) + v(j, i));
      v(i, j) = m;
      v(j, i) = m;
    }
}

}  // namespace

Matrix sandwich(const GAssembly& g, const Matrix& omega, VceMode mode) {
  const std::size_t p = g.first_dim + g.g22.rows();
  if (omega.rows() != p || omega.cols() != p)
    throw std::invalid_argument("sandwich: Omega dimension mismatch");
  double zero_tol =
      mode == VceMode::standard ? default_solve_tolerance() : 0.0;
  std::vector<LdltFactor> fj = factor_first_blocks(g, zero_tol);
  LdltFactor f2 = factor_second_block(g, zero_tol);
  Matrix a = block_solve(g, fj, f2, omega);        // G^{-1} Omega
  Matrix v = block_solve(g, fj, f2, a.transpose());  // G^{-1} (G^{-1}Omega)'
  Matrix vt = v.transpose();
  symmetrize(vt);
  if (!vt.all_finite())
    throw VceError("sandwich: variance matrix is not finite");
  return vt;
}

Matrix second_stage_only_vce(const GAssembly& g, const Matrix& omega,
                             VceMode mode) {
  const std::size_t p1 = g.first_dim;
  const std::size_t p2 = g.g22.rows();
  if (omega.rows() != p1 + p2 || omega.cols() != p1 + p2)
    throw std::invalid_argument("second_stage_only_vce: Omega dimension "
                                "mismatch");
  double zero_tol =
      mode == VceMode::standard ? default_solve_tolerance() : 0.0;
  LdltFactor f2 = factor_second_block(g, zero_tol);
  Matrix omega22 = block_of(omega, p1, p1 + p2, p1, p1 + p2);
  Matrix a = f2.solve(omega22);
  Matrix v = f2.solve(a.transpose()).transpose();
  symmetrize(v);
  return v;
}

Matrix information_vce(const GAssembly& g, VceMode mode) {
  double zero_tol =
      mode == VceMode::standard ? default_solve_tolerance() : 0.0;
  LdltFactor f2 = factor_second_block(g, zero_tol);
  Matrix v = f2.solve(Matrix::identity(g.g22.rows()));
  symmetrize(v);
  return v;
}

}  // namespace ivhazard
