#include <doctest.h>

#include <ivhazard/vce.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "stacked_fixture.hpp"
#include "support.hpp"

using namespace ivhazard;
using test_support::build_fixture;
using test_support::fixture_config_k1;
using test_support::fixture_config_k2;
using test_support::fixture_fd_jacobian;
using test_support::fixture_moments;
using test_support::fixture_theta;
using test_support::gauss_jordan_inverse;
using test_support::jacobi_eigenvalues;
using test_support::rel_err;

TEST_CASE("stacked scores sum to zero at the fitted parameters") {
  auto fx = build_fixture(fixture_config_k1(101, 200),
                          ControlFunctionSpec{2, CfForm::separate});
  Matrix s = stacked_scores(fx->model);
  REQUIRE(s.rows() == fx->frame.n_entities());
  REQUIRE(s.cols() == fx->model.dim());
  for (std::size_t c = 0; c < s.cols(); ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.rows(); ++i) sum += s(i, c);
    CHECK(std::abs(sum) < 1e-5);
  }
  // Reconstructed totals agree with the independent re-evaluator.
  auto m = fixture_moments(*fx, fixture_theta(*fx));
  for (std::size_t c = 0; c < s.cols(); ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s.rows(); ++i) sum += s(i, c);
    CHECK(std::abs(sum - m[c]) < 1e-8 * std::max(1.0, std::abs(m[c])));
  }
}

TEST_CASE("one residual, linear control function: closed-form cross block") {
  auto fx = build_fixture(fixture_config_k1(202, 150),
                          ControlFunctionSpec{1, CfForm::separate});
  const StackedModel& m = fx->model;
  REQUIRE(m.beta3.size() == 1);
  GAssembly g = build_G(m, GForm::expected);

  // With one equation and c(v) = beta3 * v, the expected-form cross block
  // is -beta3 * Xi' diag(d) Z.
  Matrix zj = select_columns(fx->first.z, fx->first.equations[0].columns);
  Matrix xdz = weighted_cross(m.xi, m.d, zj);
  REQUIRE(g.g21.rows() == m.xi.cols());
  REQUIRE(g.g21.cols() == zj.cols());
  for (std::size_t a = 0; a < g.g21.rows(); ++a)
    for (std::size_t b = 0; b < g.g21.cols(); ++b)
      CHECK(rel_err(g.g21(a, b), -m.beta3[0] * xdz(a, b), 1e-10) < 1e-12);

  // Diagonal blocks: -Z'Z and Xi' diag(d) Xi, independently recomputed.
  Matrix ztz = gram(zj);
  for (std::size_t a = 0; a < ztz.rows(); ++a)
    for (std::size_t b = 0; b < ztz.cols(); ++b)
      CHECK(rel_err(g.g11[0](a, b), -ztz(a, b), 1e-10) < 1e-12);
  Matrix xdx = weighted_gram(m.xi, m.d);
  for (std::size_t a = 0; a < xdx.rows(); ++a)
    for (std::size_t b = 0; b < xdx.cols(); ++b)
      CHECK(rel_err(g.g22(a, b), xdx(a, b), 1e-10) < 1e-12);
}

namespace {

void check_G_against_fd(const test_support::StackedFixture& fx,
                        double tol) {
  GAssembly g = build_G(fx.model, GForm::sample_jacobian);
  Matrix dense = g.full();
  auto theta = fixture_theta(fx);
  Matrix fd = fixture_fd_jacobian(fx, theta);
  REQUIRE(dense.rows() == fd.rows());
  REQUIRE(dense.cols() == fd.cols());
  double scale = 0.0;
  for (std::size_t i = 0; i < fd.rows(); ++i)
    for (std::size_t j = 0; j < fd.cols(); ++j)
      scale = std::max(scale, std::abs(fd(i, j)));
  REQUIRE(scale > 0.0);
  for (std::size_t i = 0; i < fd.rows(); ++i)
    for (std::size_t j = 0; j < fd.cols(); ++j) {
      if (std::abs(fd(i, j)) < 1e-6 * scale) {
        CHECK(std::abs(dense(i, j)) < 2e-6 * scale);
      } else {
        CHECK(rel_err(dense(i, j), fd(i, j)) < tol);
      }
    }
  // The upper-right block of the dense Jacobian must be exactly zero: the
  // first-stage moments do not involve the second-stage parameters.
  for (std::size_t i = 0; i < g.first_dim; ++i)
    for (std::size_t j = g.first_dim; j < dense.cols(); ++j)
      CHECK(dense(i, j) == 0.0);
}

}  // namespace

TEST_CASE("sample jacobian matches finite differences: one residual") {
  auto fx1 = build_fixture(fixture_config_k1(303, 50),
                           ControlFunctionSpec{1, CfForm::separate});
  check_G_against_fd(*fx1, 1e-5);
  auto fx3 = build_fixture(fixture_config_k1(304, 50),
                           ControlFunctionSpec{3, CfForm::separate});
  check_G_against_fd(*fx3, 1e-5);
}

TEST_CASE("sample jacobian matches finite differences: two residuals") {
  auto fx1 = build_fixture(fixture_config_k2(305, 50),
                           ControlFunctionSpec{1, CfForm::separate});
  check_G_against_fd(*fx1, 1e-5);
  auto fx3 = build_fixture(fixture_config_k2(306, 50),
                           ControlFunctionSpec{3, CfForm::separate});
  check_G_against_fd(*fx3, 1e-5);
  auto fxf = build_fixture(fixture_config_k2(307, 50),
                           ControlFunctionSpec{2, CfForm::full});
  check_G_against_fd(*fxf, 1e-5);
}

TEST_CASE("expected form drops exactly the score-weighted term") {
  auto fx = build_fixture(fixture_config_k1(408, 100),
                          ControlFunctionSpec{2, CfForm::separate});
  GAssembly gs = build_G(fx->model, GForm::sample_jacobian);
  GAssembly ge = build_G(fx->model, GForm::expected);
  CHECK(gs.g22 == ge.g22);
  CHECK(gs.g11[0] == ge.g11[0]);
  // Cross blocks differ only on control function rows.
  bool differs = false;
  for (std::size_t a = 0; a < gs.g21.rows(); ++a) {
    bool is_cf = fx->model.cf_term_of_col[a] >= 0;
    for (std::size_t b = 0; b < gs.g21.cols(); ++b) {
      if (gs.g21(a, b) != ge.g21(a, b)) {
        CHECK(is_cf);
        differs = true;
      }
    }
  }
  CHECK(differs);
}

TEST_CASE("kronecker path is bit-identical when equations share columns") {
  auto fx = build_fixture(fixture_config_k2(509, 80),
                          ControlFunctionSpec{2, CfForm::separate});
  GAssembly a = build_G(fx->model, GForm::sample_jacobian, false);
  GAssembly b = build_G(fx->model, GForm::sample_jacobian, true);
  REQUIRE(a.g11.size() == b.g11.size());
  for (std::size_t j = 0; j < a.g11.size(); ++j) CHECK(a.g11[j] == b.g11[j]);
  CHECK(a.g21 == b.g21);
  CHECK(a.g22 == b.g22);
}

TEST_CASE("kronecker path rejects differing instrument subsets") {
  DgpConfig cfg = fixture_config_k2(510, 80);
  auto fx = std::make_unique<test_support::StackedFixture>();
  fx->frame = build_frame(generate_panel(cfg));
  FirstStageOptions opt;
  opt.instrument_subsets = {{0, 1}, {0}};
  fx->first = fit_first_stage(fx->frame, opt);
  ControlFunctionSpec spec{1, CfForm::separate};
  fx->cf = build_cf(fx->first.residuals, spec);
  // Minimal hand-wired model: enough structure for build_G's precondition
  // check to fire before any numerics.
  StackedModel& m = fx->model;
  m.frame = &fx->frame;
  m.first = &fx->first;
  m.xi = fx->cf.columns;
  m.xi_names = {"cf_v1", "cf_v2"};
  m.gamma = {0.1, 0.1};
  m.w.assign(fx->frame.rows(), 0.0);
  m.d.assign(fx->frame.rows(), -1.0);
  m.cf_terms_kept = fx->cf.terms;
  m.cf_term_of_col = {0, 1};
  m.beta3 = {0.1, 0.1};
  CHECK_THROWS_AS(build_G(m, GForm::sample_jacobian, true), UsageError);
}

TEST_CASE("omega with singleton clusters is the score gram matrix") {
  auto fx = build_fixture(fixture_config_k1(611, 120),
                          ControlFunctionSpec{2, CfForm::separate});
  Matrix s = stacked_scores(fx->model);
  Matrix omega = build_Omega(s);
  Matrix want = gram(s);
  REQUIRE(omega.rows() == want.rows());
  for (std::size_t i = 0; i < omega.rows(); ++i)
    for (std::size_t j = 0; j < omega.cols(); ++j)
      CHECK(rel_err(omega(i, j), want(i, j), 1e-10) < 1e-10);
}

TEST_CASE("omega under one big cluster collapses to the total outer product") {
  auto fx = build_fixture(fixture_config_k1(612, 100),
                          ControlFunctionSpec{1, CfForm::separate});
  Matrix s = stacked_scores(fx->model);
  std::vector<std::size_t> one(fx->frame.n_entities(), 0);
  Matrix omega = build_Omega(s, one);
  // The totals are the fitted-moment zeros, so this is numerically tiny
  // next to the singleton-cluster version.
  Matrix ref = build_Omega(s);
  double scale = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < omega.rows(); ++i)
    for (std::size_t j = 0; j < omega.cols(); ++j) {
      scale = std::max(scale, std::abs(ref(i, j)));
      norm = std::max(norm, std::abs(omega(i, j)));
    }
  CHECK(norm < 1e-8 * scale);
}

TEST_CASE("omega is positive semidefinite") {
  auto fx = build_fixture(fixture_config_k2(613, 90),
                          ControlFunctionSpec{2, CfForm::separate});
  Matrix s = stacked_scores(fx->model);
  // Two-entity clusters exercise the grouping path.
  std::vector<std::size_t> cl(fx->frame.n_entities());
  for (std::size_t i = 0; i < cl.size(); ++i) cl[i] = i / 2;
  Matrix omega = build_Omega(s, cl);
  auto eig = jacobi_eigenvalues(omega);
  double emax = 0.0;
  for (double e : eig) emax = std::max(emax, std::abs(e));
  for (double e : eig) CHECK(e > -1e-10 * emax);
}

TEST_CASE("small-sample correction scales omega by c/(c-1)") {
  auto fx = build_fixture(fixture_config_k1(614, 60),
                          ControlFunctionSpec{1, CfForm::separate});
  Matrix s = stacked_scores(fx->model);
  const double c = static_cast<double>(fx->frame.n_entities());
  Matrix plain = build_Omega(s, false);
  Matrix corrected = build_Omega(s, true);
  for (std::size_t i = 0; i < plain.rows(); ++i)
    for (std::size_t j = 0; j < plain.cols(); ++j)
      CHECK(rel_err(corrected(i, j), plain(i, j) * c / (c - 1.0), 1e-12) <
            1e-12);
}

TEST_CASE("omega argument errors") {
  Matrix s(4, 2);
  std::vector<std::size_t> wrong(3, 0);
  CHECK_THROWS_AS(build_Omega(s, wrong), std::invalid_argument);
  std::vector<std::size_t> one(4, 0);
  CHECK_THROWS_AS(build_Omega(s, one, true), UsageError);
}

TEST_CASE("sandwich with identity blocks is the identity") {
  const std::size_t p = 3;
  GAssembly g;
  g.first_dim = 0;
  g.g21 = Matrix(p, 0);
  Matrix m22 = Matrix::identity(p);
  m22 *= -1.0;
  g.g22 = m22;
  Matrix omega = Matrix::identity(p);
  Matrix v = sandwich(g, omega, VceMode::standard);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j)
      CHECK(rel_err(v(i, j), i == j ? 1.0 : 0.0, 1e-14) < 1e-12);
}

TEST_CASE("sandwich agrees with an explicit dense inverse") {
  auto fx = build_fixture(fixture_config_k1(715, 120),
                          ControlFunctionSpec{2, CfForm::separate});
  GAssembly g = build_G(fx->model, GForm::sample_jacobian);
  Matrix s = stacked_scores(fx->model);
  Matrix omega = build_Omega(s);
  Matrix v = sandwich(g, omega, VceMode::standard);

  Matrix ginv = gauss_jordan_inverse(g.full());
  Matrix via = ginv * omega * ginv.transpose();
  double scale = 0.0;
  for (std::size_t i = 0; i < via.rows(); ++i)
    for (std::size_t j = 0; j < via.cols(); ++j)
      scale = std::max(scale, std::abs(via(i, j)));
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j)
      CHECK(std::abs(v(i, j) - via(i, j)) < 1e-9 * scale);
}

TEST_CASE("sandwich output is symmetric and positive semidefinite") {
  auto fx = build_fixture(fixture_config_k2(716, 110),
                          ControlFunctionSpec{2, CfForm::separate});
  GAssembly g = build_G(fx->model, GForm::sample_jacobian);
  Matrix omega = build_Omega(stacked_scores(fx->model));
  Matrix v = sandwich(g, omega, VceMode::standard);
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j)
      CHECK(v(i, j) == v(j, i));
  auto eig = jacobi_eigenvalues(v);
  double emax = 0.0;
  for (double e : eig) emax = std::max(emax, std::abs(e));
  for (double e : eig) CHECK(e > -1e-8 * emax);
}

TEST_CASE("leading block of the stacked variance is the ols sandwich") {
  auto fx = build_fixture(fixture_config_k1(817, 150),
                          ControlFunctionSpec{2, CfForm::separate});
  GAssembly g = build_G(fx->model, GForm::sample_jacobian);
  Matrix s = stacked_scores(fx->model);
  Matrix omega = build_Omega(s);
  Matrix v = sandwich(g, omega, VceMode::standard);

  // First-stage-only assembly over the same data.
  GAssembly g1;
  g1.g11 = g.g11;
  g1.first_dim = g.first_dim;
  g1.g21 = Matrix(0, g.first_dim);
  g1.g22 = Matrix(0, 0);
  Matrix s1 = first_stage_score(fx->first, fx->frame);
  Matrix omega1 = build_Omega(s1);
  Matrix v1 = sandwich(g1, omega1, VceMode::standard);

  REQUIRE(v1.rows() == g.first_dim);
  double scale = 0.0;
  for (std::size_t i = 0; i < v1.rows(); ++i)
    for (std::size_t j = 0; j < v1.cols(); ++j)
      scale = std::max(scale, std::abs(v1(i, j)));
  for (std::size_t i = 0; i < v1.rows(); ++i)
    for (std::size_t j = 0; j < v1.cols(); ++j)
      CHECK(std::abs(v(i, j) - v1(i, j)) < 1e-10 * scale);
}

TEST_CASE("second-stage-only variance ignores the first stage") {
  auto fx = build_fixture(fixture_config_k1(918, 150),
                          ControlFunctionSpec{2, CfForm::separate});
  GAssembly g = build_G(fx->model, GForm::sample_jacobian);
  Matrix s = stacked_scores(fx->model);
  Matrix omega = build_Omega(s);
  Matrix conv = second_stage_only_vce(g, omega, VceMode::standard);
  REQUIRE(conv.rows() == fx->model.second_dim());

  // Oracle: invert -G22, wrap around the second-stage score block of omega.
  Matrix neg = g.g22;
  neg *= -1.0;
  Matrix inv = gauss_jordan_inverse(neg);
  const std::size_t p1 = g.first_dim;
  Matrix o22(conv.rows(), conv.cols());
  for (std::size_t i = 0; i < o22.rows(); ++i)
    for (std::size_t j = 0; j < o22.cols(); ++j)
      o22(i, j) = omega(p1 + i, p1 + j);
  Matrix want = inv * o22 * inv.transpose();
  double scale = 0.0;
  for (std::size_t i = 0; i < want.rows(); ++i)
    for (std::size_t j = 0; j < want.cols(); ++j)
      scale = std::max(scale, std::abs(want(i, j)));
  for (std::size_t i = 0; i < conv.rows(); ++i)
    for (std::size_t j = 0; j < conv.cols(); ++j)
      CHECK(std::abs(conv(i, j) - want(i, j)) < 1e-9 * scale);
}

TEST_CASE("with exogenous data the first-stage correction is modest") {
  DgpConfig cfg = fixture_config_k1(1019, 5000);
  cfg.rho = 0.0;  // x is exogenous; the correction should be small
  auto fx = build_fixture(cfg, ControlFunctionSpec{1, CfForm::separate});
  GAssembly g = build_G(fx->model, GForm::sample_jacobian);
  Matrix omega = build_Omega(stacked_scores(fx->model));
  Matrix full = sandwich(g, omega, VceMode::standard);
  Matrix conv = second_stage_only_vce(g, omega, VceMode::standard);
  // Structural coefficient: the endogenous column of the design.
  std::size_t idx = fx->cf_start - 1;
  double se_full = std::sqrt(full(g.first_dim + idx, g.first_dim + idx));
  double se_conv = std::sqrt(conv(idx, idx));
  CHECK(se_full / se_conv > 0.8);
  CHECK(se_full / se_conv < 1.25);
}

TEST_CASE("information variance is the inverse curvature block") {
  auto fx = build_fixture(fixture_config_k1(1120, 100),
                          ControlFunctionSpec{1, CfForm::separate});
  GAssembly g = build_G(fx->model, GForm::sample_jacobian);
  Matrix v = information_vce(g, VceMode::standard);
  Matrix neg = g.g22;
  neg *= -1.0;
  Matrix want = gauss_jordan_inverse(neg);
  double scale = 0.0;
  for (std::size_t i = 0; i < want.rows(); ++i)
    for (std::size_t j = 0; j < want.cols(); ++j)
      scale = std::max(scale, std::abs(want(i, j)));
  for (std::size_t i = 0; i < v.rows(); ++i)
    for (std::size_t j = 0; j < v.cols(); ++j)
      CHECK(std::abs(v(i, j) - want(i, j)) < 1e-9 * scale);
}

TEST_CASE("singular curvature: standard mode refuses with guidance") {
  GAssembly g;
  g.first_dim = 0;
  g.g21 = Matrix(2, 0);
  g.g22 = Matrix(2, 2);
  g.g22(0, 0) = -1.0;
  g.g22(1, 1) = -1e-30;  // far beyond the standard pivot tolerance
  Matrix omega = Matrix::identity(2);
  try {
    sandwich(g, omega, VceMode::standard);
    FAIL("expected SingularMatrixError");
  } catch (const SingularMatrixError& e) {
    std::string msg = e.what();
    CHECK(msg.find("second-stage curvature block") != std::string::npos);
    CHECK(msg.find("--difficult-vce") != std::string::npos);
  }
  // The escape hatch accepts the tiny pivot and produces a finite result.
  Matrix v = sandwich(g, omega, VceMode::zero_tolerance);
  CHECK(std::isfinite(v(0, 0)));
  CHECK(std::isfinite(v(1, 1)));
  CHECK(rel_err(v(0, 0), 1.0, 1e-12) < 1e-12);
  CHECK(rel_err(v(1, 1), 1e60, 1e-12) < 1e-10);
}

TEST_CASE("stacked labels cover both stages in order") {
  auto fx = build_fixture(fixture_config_k1(1221, 60),
                          ControlFunctionSpec{1, CfForm::separate});
  auto labels = fx->model.labels();
  REQUIRE(labels.size() == fx->model.dim());
  CHECK(labels[0].rfind("pi[x1]:", 0) == 0);
  CHECK(labels[0].find("d_t") != std::string::npos);
  CHECK(labels[fx->model.first_dim()] == fx->model.xi_names[0]);
  CHECK(labels.back() == "cf_v1");
}
