#include <gtest/gtest.h>

#include <cmath>

#include "simil/errors.hpp"
#include "simil/linearize.hpp"

using namespace simil;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }
Vector v1(double v) { return Vector::Constant(1, v); }

SdeSystem poly_drift(std::vector<Monomial> terms, double noise = 0.0) {
  return SdeSystem(PolynomialDrift{{Polynomial(1, std::move(terms))}}, ConstantDiffusion{m1(noise)});
}

// dx = (-x + a x^3) dt, no noise.
SdeSystem cubic(double a) { return poly_drift({{-1.0, {1}}, {a, {3}}}); }

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::InvalidArgument;
}

// Closed-form bounded conjugacy for dx = (-x + a x^3) dt with the remainder frozen at
// gamma(+-delta) outside the ball. Beyond the ball, x = y + c sign(y), c = a delta^3.
// Inside, 1/x^2 - a = C / y^2 is invariant under both flows; matching at x = delta,
// y = delta - c gives C = (1/delta^2 - a)(delta - c)^2.
double kappa_oracle(double a, double delta, double y) {
  const double c = a * delta * delta * delta;
  if (std::abs(y) >= delta - c) return std::copysign(c, y);
  const double C = (1.0 / (delta * delta) - a) * (delta - c) * (delta - c);
  return y / std::sqrt(C + a * y * y) - y;
}

KappaSolution cubic_kappa(double a, double eps = 0.1) {
  const auto pair = linearize_at_fixed_point(cubic(a));
  const auto spec = lyapunov_spectrum(pair.cocycle(), {50.0, 0.01, 8, 0, eps});
  const auto kernel = build_green_kernel(pair, spec, eps);
  return solve_kappa_fixed_point(pair, kernel);
}

}  // namespace

TEST(KstarOde, IdenticalSystemsGiveIdentity) {
  // dK/dx = (2K - x)/x has solutions K = x + C x^2; the anchor (1, 1) selects C = 0.
  const SdeSystem s = SdeSystem::linear(m1(1.0), m1(1.0));
  const auto sol = solve_kstar_ode_1d({s, s, 1.0, 1.0, 0.5, 2.0, 300});
  EXPECT_FALSE(sol.non_monotone);
  const auto& tab = std::get<Tabulated1d>(sol.K.variant());
  for (std::size_t i = 0; i < tab.knots().size(); ++i) EXPECT_NEAR(tab.values()[i], tab.knots()[i], 1e-6);
  EXPECT_EQ(tab.knots().front(), 0.5);
  EXPECT_EQ(tab.knots().back(), 2.0);
}

TEST(KstarOde, ConstantRightHandSide) {
  // f = 1, sigma = 1, g = 0, vs = 1: dK/dx = -1 so K = -x from (0, 0).
  const SdeSystem sx(AffineDrift{m1(0.0), v1(1.0)}, ConstantDiffusion{m1(1.0)});
  const SdeSystem sy = SdeSystem::linear(m1(0.0), m1(1.0));
  const auto sol = solve_kstar_ode_1d({sx, sy, 0.0, 0.0, -1.0, 1.0, 100});
  EXPECT_FALSE(sol.non_monotone);
  const auto& tab = std::get<Tabulated1d>(sol.K.variant());
  EXPECT_EQ(tab.monotone_direction(), -1);
  for (std::size_t i = 0; i < tab.knots().size(); ++i) EXPECT_NEAR(tab.values()[i], -tab.knots()[i], 1e-12);
}

TEST(KstarOde, ReportsNonMonotoneSolution) {
  // K = x + 0.2 x^2 through (-3, -1.2) turns at x = -2.5.
  const SdeSystem s = SdeSystem::linear(m1(1.0), m1(1.0));
  const auto sol = solve_kstar_ode_1d({s, s, -3.0, -1.2, -4.0, -1.0, 600});
  EXPECT_TRUE(sol.non_monotone);
  const auto& tab = std::get<Tabulated1d>(sol.K.variant());
  for (std::size_t i = 0; i < tab.knots().size(); ++i) {
    const double x = tab.knots()[i];
    EXPECT_NEAR(tab.values()[i], x + 0.2 * x * x, 1e-8);
  }
}

TEST(KstarOde, SingularDenominator) {
  const SdeSystem s = SdeSystem::linear(m1(1.0), m1(1.0));
  try {
    solve_kstar_ode_1d({s, s, 0.5, 0.5, -1.0, 1.0, 100});
    FAIL();
  } catch (const SingularDenominator& e) {
    EXPECT_NEAR(e.x(), 0.0, 2.0 / 999);
  }
}

TEST(KstarOde, EndToEndConjugacyOnIdenticalSystems) {
  const SdeSystem s = SdeSystem::linear(m1(1.0), m1(1.0));
  const auto sol = solve_kstar_ode_1d({s, s, 1.0, 1.0, 0.5, 2.0, 300});
  EnsembleConfig cfg;
  cfg.sys_x = cfg.sys_y = s;
  cfg.x0 = cfg.y0 = v1(1.0);
  cfg.grid = TimeGrid(0.5, 100);
  cfg.n_paths = 100;
  const auto ens = simulate_ensemble(cfg);
  const auto curve = defect_curve(ens, sol.K);
  const auto J = cost_J(ens, sol.K);
  const auto th = default_thresholds(curve, J, 1.0);
  EXPECT_LT(J.value, th.eps_c);
  EXPECT_LT(J.value, 1e-10);
}

TEST(KstarMatrix, IdentityOnConjugacyManifold) {
  Matrix A(2, 2), B(2, 2);
  A << -1, 0.5, 0.2, -0.3;
  B << 1.0, 0.4, -0.2, 0.8;
  const SdeSystem s = SdeSystem::linear(A, B);
  Vector x(2), y(2);
  x << 0.3, -0.7;
  y << 1.1, 0.2;
  const Matrix exact = kstar_matrix_rhs(s, s, x, y, y, 0.0);
  EXPECT_LE((exact - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-14);
  const Matrix ridged = kstar_matrix_rhs(s, s, x, y, y);
  EXPECT_LE((ridged - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(KstarMatrix, ScalarReduction) {
  const SdeSystem sx = poly_drift({{0.5, {1}}, {-1.0, {3}}}, 0.7);
  const SdeSystem sy = SdeSystem::linear(m1(-1.0), m1(1.3));
  const double x = 0.8, y = -0.4, Kx = 0.1;
  const double psi = Kx - y, f = 0.5 * x - x * x * x, sig = 0.7, vs = 1.3;
  const double expected = (psi * f - sig * vs) / (-sig * sig);
  EXPECT_NEAR(kstar_matrix_rhs(sx, sy, v1(x), v1(y), v1(Kx), 0.0)(0, 0), expected, 1e-14);
  EXPECT_NEAR(kstar_matrix_rhs(sx, sy, v1(x), v1(y), v1(Kx))(0, 0), expected, 1e-9);
}

TEST(KstarMatrix, SingularDiffusion) {
  Matrix B(2, 2);
  B << 1, 0, 0, 0;
  const SdeSystem s = SdeSystem::linear(-Matrix::Identity(2, 2), B);
  const Vector z = Vector::Zero(2);
  EXPECT_EQ(code_of([&] { kstar_matrix_rhs(s, s, z, z, z, 0.0); }), ErrorCode::SingularDiffusion);
}

TEST(Linearize, PolynomialDerivativesAtZero) {
  const SdeSystem s(PolynomialDrift{{Polynomial(1, {{-1.0, {1}}, {1.0, {3}}})}},
                    PolynomialDiffusion{1, {Polynomial(1, {{1.0, {1}}})}});
  const auto pair = linearize_at_fixed_point(s);
  EXPECT_EQ(pair.A0(0, 0), -1.0);
  ASSERT_EQ(pair.A.size(), 1u);
  EXPECT_EQ(pair.A[0](0, 0), 1.0);
  EXPECT_FALSE(pair.deterministic());
  EXPECT_NEAR(pair.remainder(v1(0.5))[0], 0.125, 1e-15);
}

TEST(Linearize, RejectsNonFixedPoint) {
  const SdeSystem s = poly_drift({{0.1, {0}}, {-1.0, {1}}});
  EXPECT_EQ(code_of([&] { linearize_at_fixed_point(s); }), ErrorCode::NotAFixedPoint);
  const SdeSystem noisy = SdeSystem::linear(m1(-1.0), m1(0.5));
  EXPECT_EQ(code_of([&] { linearize_at_fixed_point(noisy); }), ErrorCode::NotAFixedPoint);
}

TEST(GreenKernel, ScalarStableFlow) {
  const auto pair = linearize_at_fixed_point(SdeSystem::linear(m1(-1.0), m1(0.0)));
  const auto spec = lyapunov_spectrum(pair.cocycle(), {50.0, 0.01, 8, 0, 0.1});
  const auto G = build_green_kernel(pair, spec, 0.1);
  EXPECT_NEAR(G.lambda1, -1.0, 1e-9);
  EXPECT_NEAR(G.M_eps, 1.0, 1e-9);
  EXPECT_NEAR(G(2.0)(0, 0), std::exp(-2.0), 1e-14);
  EXPECT_EQ(G(-1.0)(0, 0), 0.0);
  EXPECT_TRUE(G.envelope_holds(50.0, 2001));
  const Matrix P = G.P_plus;
  EXPECT_EQ(P * P, P);
}

TEST(GreenKernel, TwoDimensionalEnvelope) {
  Matrix A(2, 2);
  A << -1.0, 3.0, 0.0, -2.0;  // non-normal: transient growth before decay
  const auto pair = linearize_at_fixed_point(SdeSystem::linear(A, Matrix::Zero(2, 1)));
  const auto spec = lyapunov_spectrum(pair.cocycle(), {50.0, 0.01, 8, 0, 0.1});
  const auto G = build_green_kernel(pair, spec, 0.1);
  EXPECT_GT(G.M_eps, 1.0);
  EXPECT_TRUE(G.envelope_holds(50.0, 2001));
}

TEST(GreenKernel, UnstableLinearPartUnsupported) {
  const auto pair = linearize_at_fixed_point(SdeSystem::linear(m1(1.0), m1(0.0)));
  const auto spec = lyapunov_spectrum(pair.cocycle(), {20.0, 0.01, 8, 0, 0.1});
  EXPECT_EQ(code_of([&] { build_green_kernel(pair, spec, 0.1); }), ErrorCode::UnsupportedDichotomy);
}

TEST(Kappa, LinearSystemGivesZero) {
  const auto pair = linearize_at_fixed_point(poly_drift({{-1.0, {1}}}));
  const auto spec = lyapunov_spectrum(pair.cocycle(), {50.0, 0.01, 8, 0, 0.1});
  const auto sol = solve_kappa_fixed_point(pair, build_green_kernel(pair, spec, 0.1));
  EXPECT_EQ(sol.iterations_used, 1);
  EXPECT_EQ(sol.sup_norm(), 0.0);
  EXPECT_EQ(sol.final_residual, 0.0);
}

TEST(Kappa, CubicPerturbationContracts) {
  const double a = 0.1;
  const auto sol = cubic_kappa(a);
  EXPECT_NEAR(sol.delta, 0.9 / (4.0 * 0.6), 1e-12);
  EXPECT_LE(sol.contraction_bound, 0.5 + 1e-12);
  EXPECT_LE(sol.contraction_factor_observed, 0.55);
  EXPECT_LE(sol.final_residual, 1e-12);
  for (std::size_t i = 1; i < sol.residual_history.size(); ++i) {
    if (sol.residual_history[i - 1] > 1e-13) {
      EXPECT_LE(sol.residual_history[i], 0.55 * sol.residual_history[i - 1]);
    }
  }
  EXPECT_LE(sol.sup_norm(), 2.0 * 1.0 * sol.delta / 0.9);

  const double band = sol.interpolation_error + sol.quadrature_error + 1e-10;
  for (double y = -sol.half_width; y <= sol.half_width; y += sol.half_width / 97)
    EXPECT_NEAR(sol.kappa(y), kappa_oracle(a, sol.delta, y), 10 * band) << y;
}

TEST(Kappa, ConjugatesTheFlows) {
  const double a = 0.1;
  const auto sol = cubic_kappa(a);
  const auto pair = linearize_at_fixed_point(cubic(a));
  const double defect = flow_commutation_defect(pair, sol);
  EXPECT_LE(defect, 5 * (sol.interpolation_error + sol.quadrature_error));
  // Brute force with an independent RK4 at a finer step.
  double worst = 0.0;
  for (double x0 = -sol.delta; x0 <= sol.delta; x0 += sol.delta / 10) {
    double x = x0;
    const double h = 2.5e-4;
    for (int k = 1; k <= 4000; ++k) {
      auto f = [a](double u) { return -u + a * u * u * u; };
      const double k1 = f(x), k2 = f(x + 0.5 * h * k1), k3 = f(x + 0.5 * h * k2), k4 = f(x + h * k3);
      x += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    worst = std::max(worst, std::abs(sol.H(x) - std::exp(-1.0) * sol.H(x0)));
  }
  EXPECT_LE(worst, 5 * (sol.interpolation_error + sol.quadrature_error));
}

TEST(Kappa, RejectsOversizedBall) {
  const auto pair = linearize_at_fixed_point(cubic(0.1));
  const auto spec = lyapunov_spectrum(pair.cocycle(), {50.0, 0.01, 8, 0, 0.1});
  KappaOptions opt;
  opt.delta = 2.0;
  EXPECT_EQ(code_of([&] { solve_kappa_fixed_point(pair, build_green_kernel(pair, spec, 0.1), opt); }),
            ErrorCode::ContractionViolated);
}

namespace {

Ensemble hg_ensemble(const SdeSystem& sx, double x0, double y0, double T, int steps) {
  EnsembleConfig cfg;
  cfg.sys_x = sx;
  cfg.sys_y = SdeSystem::linear(m1(-1.0), m1(0.0));
  cfg.x0 = v1(x0);
  cfg.y0 = v1(y0);
  cfg.grid = TimeGrid(T, steps);
  cfg.n_paths = 4;
  return simulate_ensemble(cfg);
}

}  // namespace

TEST(PreExitDefect, LinearSystemIsExact) {
  const auto pair = linearize_at_fixed_point(poly_drift({{-1.0, {1}}}));
  KappaSolution zero;
  zero.delta = 1.0;
  const auto est = verify_conjugacy_defect(pair, zero, hg_ensemble(pair.system, 0.5, 0.5, 2.0, 200));
  EXPECT_EQ(est.value, 0.0);
  EXPECT_EQ(est.kind, CostKind::PreExitDefect);
}

TEST(PreExitDefect, CubicWithinDiscretisationBand) {
  const double a = 0.1;
  const auto sol = cubic_kappa(a);
  const auto pair = linearize_at_fixed_point(cubic(a));
  const double x0 = 0.3;
  std::vector<double> defects;
  for (int steps : {200, 400, 800}) {
    const auto ens = hg_ensemble(pair.system, x0, sol.H(x0), 2.0, steps);
    defects.push_back(verify_conjugacy_defect(pair, sol, ens).value);
  }
  // Euler error is first order, so the defect halves with dt down to the interpolation floor.
  EXPECT_NEAR(defects[0] / defects[1], 2.0, 0.2);
  EXPECT_NEAR(defects[1] / defects[2], 2.0, 0.2);
  EXPECT_LE(defects[2], 2.0 * 2.0 / 800 * a * x0 * x0 * x0 + 5 * sol.interpolation_error);
}

TEST(PreExitDefect, ShrinksCubicallyWithRadius) {
  // kappa = 0 leaves the O(|x|^3) remainder of dx = (-x + x^3) dt as the defect.
  const auto pair = linearize_at_fixed_point(cubic(1.0));
  KappaSolution zero;
  zero.delta = 1.0;
  std::vector<double> lr, ld;
  for (double r : {0.025, 0.05, 0.1, 0.2}) {
    lr.push_back(std::log(r));
    ld.push_back(std::log(verify_conjugacy_defect(pair, zero, hg_ensemble(pair.system, r, r, 1.0, 1000)).value));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lr.size(); ++i) mx += lr[i] / lr.size(), my += ld[i] / ld.size();
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lr.size(); ++i) sxy += (lr[i] - mx) * (ld[i] - my), sxx += (lr[i] - mx) * (lr[i] - mx);
  EXPECT_NEAR(sxy / sxx, 3.0, 0.15);
}

TEST(PreExitDefect, AllPathsOutside) {
  const auto pair = linearize_at_fixed_point(cubic(0.1));
  KappaSolution zero;
  zero.delta = 0.1;
  EXPECT_EQ(code_of([&] { verify_conjugacy_defect(pair, zero, hg_ensemble(pair.system, 0.5, 0.5, 1.0, 10)); }),
            ErrorCode::AllPathsExitImmediately);
}
