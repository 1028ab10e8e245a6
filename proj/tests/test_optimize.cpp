#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "simil/errors.hpp"
#include "simil/optimize.hpp"

using namespace simil;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }
Vector v1(double v) { return Vector::Constant(1, v); }
MappingK k1(double v) { return MappingK::linear(m1(v)); }

Ensemble make(const SdeSystem& sx, const SdeSystem& sy, const Vector& x0, const Vector& y0, double T, int steps,
              int paths, std::uint64_t seed = 5) {
  EnsembleConfig cfg;
  cfg.sys_x = sx;
  cfg.sys_y = sy;
  cfg.x0 = x0;
  cfg.y0 = y0;
  cfg.grid = TimeGrid(T, steps);
  cfg.n_paths = paths;
  cfg.master_seed = seed;
  return simulate_ensemble(cfg);
}

// dX = 2X dt + dW, dY = X dt + 0.5 dW: K* = C A^{-1} = 0.5.
Ensemble output_system(int paths, double T = 2.0, int steps = 2000) {
  return make(SdeSystem::linear(m1(2.0), m1(1.0)), SdeSystem::linear(m1(1.0), m1(0.5), DriftInput::Partner), v1(1.0),
              v1(0.5), T, steps, paths);
}

// dX = -X dt + dW, dY = -Y dt + 2 dW from the origin.
Ensemble ou_pair(int paths, double T = 2.0, int steps = 200) {
  return make(SdeSystem::linear(m1(-1.0), m1(1.0)), SdeSystem::linear(m1(-1.0), m1(2.0)), v1(0.0), v1(0.0), T, steps,
              paths);
}

// Discrete-time second moment of the Euler scheme for dX = -X dt + dW from 0:
// v_{k+1} = (1 - dt)^2 v_k + dt, time-averaged with the trapezoid rule.
double em_ou_time_average(double T, int steps) {
  const double dt = T / steps;
  std::vector<double> v(steps + 1, 0.0);
  for (int k = 0; k < steps; ++k) v[k + 1] = (1 - dt) * (1 - dt) * v[k] + dt;
  double s = 0.5 * (v.front() + v.back());
  for (int k = 1; k < steps; ++k) s += v[k];
  return s * dt / T;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(CostSpec, PartialsMatchFiniteDifferences) {
  const double T = 3.0;
  const CostSpec c = CostSpec::similarity(T);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> nrm;
  for (int trial = 0; trial < 10; ++trial) {
    Matrix Km(2, 2);
    Km << 1.0 + 0.3 * nrm(rng), 0.2 * nrm(rng), 0.2 * nrm(rng), 1.0 + 0.3 * nrm(rng);
    Vector b(2), x(2), y(2);
    b << nrm(rng), nrm(rng);
    x << nrm(rng), nrm(rng);
    y << nrm(rng), nrm(rng);
    const MappingK K = MappingK::affine(Km, b);
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
      Vector e = Vector::Zero(2);
      e[i] = h;
      const double fx = (c.L(x + e, y, K) - c.L(x - e, y, K)) / (2 * h);
      const double fy = (c.L(x, y + e, K) - c.L(x, y - e, K)) / (2 * h);
      const double gx = (c.h(x + e, y, K) - c.h(x - e, y, K)) / (2 * h);
      const double gy = (c.h(x, y + e, K) - c.h(x, y - e, K)) / (2 * h);
      EXPECT_LE(rel(c.L_X(x, y, K)[i], fx), 1e-6);
      EXPECT_LE(rel(c.L_Y(x, y, K)[i], fy), 1e-6);
      EXPECT_LE(rel(c.h_X(x, y, K)[i], gx), 1e-6);
      EXPECT_LE(rel(c.h_Y(x, y, K)[i], gy), 1e-6);
    }
    for (const auto& dir : random_directions(K, 3, trial)) {
      const double fk = (c.L(x, y, K.perturbed(dir, h)) - c.L(x, y, K.perturbed(dir, -h))) / (2 * h);
      const double gk = (c.h(x, y, K.perturbed(dir, h)) - c.h(x, y, K.perturbed(dir, -h))) / (2 * h);
      EXPECT_LE(rel(c.L_K(x, y, K, dir), fk), 1e-6);
      EXPECT_LE(rel(c.h_K(x, y, K, dir), gk), 1e-6);
    }
  }
}

TEST(CostSpec, TabulatedDirectionUsesTheInterpolant) {
  const MappingK K = MappingK::tabulated({-1, 0, 1, 2}, {-2, 0, 1, 3});
  const MappingK dir = MappingK::tabulated({-1, 0, 1, 2}, {0.1, -0.3, 0.2, 0.5});
  const CostSpec c = CostSpec::similarity(1.0);
  const Vector x = v1(0.37), y = v1(0.1);
  const double h = 1e-5;
  const double fd = (c.L(x, y, K.perturbed(dir, h)) - c.L(x, y, K.perturbed(dir, -h))) / (2 * h);
  EXPECT_NEAR(c.L_K(x, y, K, dir), fd, 1e-6);
}

TEST(Optimize, IdenticalSystemsRecoverIdentity) {
  Matrix A(2, 2);
  A << -1.0, 0.3, 0.0, -0.5;
  const SdeSystem s = SdeSystem::linear(A, Matrix::Identity(2, 2));
  Vector x0(2);
  x0 << 1.0, -1.0;
  auto ens = make(s, s, x0, x0, 1.0, 100, 100);
  Matrix K0(2, 2);
  K0 << 1.2, 0.1, 0.0, 0.8;
  const auto res = optimize_K(MappingK::linear(K0), ens);
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.J_best.value, 1e-6);
  Matrix K;
  Vector b;
  ASSERT_TRUE(res.best_K.affine_parts(K, b));
  EXPECT_LE((K - Matrix::Identity(2, 2)).norm(), 1e-3);
  EXPECT_TRUE(res.homeo.is_injective_on_sample);
  EXPECT_LE(res.J_best.value, res.J_initial.value + 3 * res.J_initial.std_error);
}

TEST(Optimize, OutputSystemRecoversCAinv) {
  auto ens = output_system(200);
  const auto res = optimize_K(k1(1.0), ens);
  Matrix K;
  Vector b;
  ASSERT_TRUE(res.best_K.affine_parts(K, b));
  EXPECT_NEAR(K(0, 0), 0.5, 0.02);
  EXPECT_TRUE(res.converged);
  const auto j_star = cost_J(ens, k1(0.5));
  EXPECT_EQ(j_star.value, 0.0);
  // Exact zero at K*; the optimiser stops within its simplex diameter of it.
  EXPECT_LE(res.J_best.value, j_star.value + 3 * j_star.std_error + 1e-8);
  ASSERT_FALSE(res.trace.empty());
  for (std::size_t i = 1; i < res.trace.size(); ++i) EXPECT_LE(res.trace[i].second, res.trace[i - 1].second);
}

TEST(Optimize, OuPairRecoversNoiseRatio) {
  // Stationary moments solve A S + S A^T + B B^T = 0 with A = -I, B = (1, 2)^T,
  // so S = B B^T / 2 and k* = E[XY] / E[X^2] = 2.
  const double k_star = (0.5 * 1.0 * 2.0) / (0.5 * 1.0 * 1.0);
  auto ens = ou_pair(400);
  const auto res = optimize_K(k1(1.0), ens);
  Matrix K;
  Vector b;
  ASSERT_TRUE(res.best_K.affine_parts(K, b));
  EXPECT_NEAR(K(0, 0), k_star, 0.05);
}

TEST(Optimize, InvertibilityPenaltyExhaustsRestarts) {
  auto ens = ou_pair(20, 1.0, 20);
  OptOptions opt;
  opt.restarts = 1;
  opt.max_iter = 1;
  opt.step = 1e-9;
  try {
    optimize_K(MappingK::tabulated({-1, 0, 1, 2}, {0, 0, 0, 0}), ens, opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllRestartsNonInvertible);
  }
}

TEST(Optimize, RejectsBadOptions) {
  auto ens = ou_pair(5, 1.0, 10);
  OptOptions opt;
  opt.restarts = 0;
  EXPECT_THROW(optimize_K(k1(1.0), ens, opt), Error);
  Matrix A = Matrix::Identity(2, 2);
  EXPECT_THROW(optimize_K(MappingK::linear(A), ens), Error);
}

TEST(DirectionalDerivative, NonNegativeAtOptimum) {
  auto ens = output_system(200);
  const auto res = optimize_K(k1(1.0), ens);
  for (const auto& dir : random_directions(res.best_K, 20, 17)) {
    const auto d = directional_derivative(ens, res.best_K, dir, 1e-3);
    const double floor = std::abs(d.curvature) * std::max(res.final_diameter, 1e-12);
    EXPECT_GE(d.value, -(10 * d.std_error + floor));
  }
}

TEST(DirectionalDerivative, NegativeAlongDescent) {
  auto ens = output_system(200);
  const auto d = directional_derivative(ens, k1(1.0), k1(-1.0), 1e-3);
  EXPECT_LT(d.value, -10 * d.std_error);
}

TEST(DirectionalDerivative, QuadraticLandscapeOfOuPair) {
  const double T = 2.0;
  const int steps = 200;
  auto ens = ou_pair(2000, T, steps);
  const auto d1 = directional_derivative(ens, k1(1.0), k1(1.0), 1e-3);
  const auto d3 = directional_derivative(ens, k1(3.0), k1(1.0), 1e-3);
  // J(k) = (k - 2)^2 S on a fixed ensemble, so the derivative is linear in k - 2.
  EXPECT_NEAR(d3.value / d1.value, -1.0, 1e-8);
  const double slope = d3.value / (3.0 - 2.0);
  const double oracle = 2.0 * em_ou_time_average(T, steps);
  EXPECT_NEAR(slope, oracle, 4 * d3.std_error + 1e-3 * oracle);
  EXPECT_NEAR(d1.curvature, oracle, 1e-6 * oracle + 4 * d3.std_error);
}

TEST(DirectionalDerivative, CentralAndForwardAgree) {
  auto ens = ou_pair(200);
  const MappingK K = k1(1.0), dir = k1(1.0);
  const double j0 = cost_J(ens, K).value;
  for (double eps : {1e-4, 1e-3, 1e-2}) {
    const double central = directional_derivative(ens, K, dir, eps).value;
    const double forward = (cost_J(ens, K.perturbed(dir, eps)).value - j0) / eps;
    EXPECT_LE(std::abs(central - forward), 0.1 * std::abs(central));
  }
}

TEST(DirectionalDerivative, StepTooLarge) {
  auto ens = ou_pair(5, 1.0, 10);
  try {
    directional_derivative(ens, MappingK::tabulated({0, 1, 2}, {0, 1, 2}), MappingK::tabulated({0, 1, 2}, {0, -1, 0}),
                           1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StepTooLarge);
  }
}

TEST(Variational, LinearSystemStaysAtZero) {
  auto ens = ou_pair(10, 1.0, 50);
  const auto v = solve_variational_equations(ens);
  for (const auto& path : v.x_hat)
    for (double e : path) EXPECT_EQ(e, 0.0);
  for (const auto& path : v.y_hat)
    for (double e : path) EXPECT_EQ(e, 0.0);
}

TEST(Variational, CubicDriftMatchesFiniteDifference) {
  // dX = (0.5 X - X^3) dt + 0.3 X dW. The forcing phi enters the drift as e*phi.
  const double phi = 1.0, eps = 1e-4;
  auto cubic = [](double c) {
    return SdeSystem(PolynomialDrift{{Polynomial(1, {{0.5, {1}}, {-1.0, {3}}, {c, {0}}})}},
                     LinearInStateDiffusion{{m1(0.3)}});
  };
  auto base = make(cubic(0.0), cubic(0.0), v1(0.8), v1(0.8), 1.0, 200, 50);
  auto bumped = make(cubic(eps * phi), cubic(0.0), v1(0.8), v1(0.8), 1.0, 200, 50);
  VariationalOptions opt;
  opt.forcing_x = v1(phi);
  const auto v = solve_variational_equations(base, opt);
  for (int p = 0; p < base.n_paths(); ++p)
    for (int k = 0; k < base.grid().n_points(); k += 20) {
      const double fd = (bumped.pairs[p].x_at(k)[0] - base.pairs[p].x_at(k)[0]) / eps;
      const double xh = v.x_hat_at(p, k)[0];
      EXPECT_LE(std::abs(fd - xh), 0.01 * std::max(std::abs(xh), 1e-3)) << p << " " << k;
      EXPECT_EQ(v.y_hat_at(p, k)[0], 0.0);
    }
}

TEST(Variational, ZeroCoefficientSystem) {
  const SdeSystem z = SdeSystem::linear(m1(0.0), m1(0.0));
  auto ens = make(z, z, v1(1.0), v1(1.0), 1.0, 20, 4);
  const auto v = solve_variational_equations(ens);
  for (const auto& path : v.x_hat)
    for (double e : path) EXPECT_EQ(e, 0.0);
}

TEST(Variational, NeedsIncrements) {
  auto ens = ou_pair(3, 1.0, 10);
  for (auto& p : ens.pairs) p.path.increments.clear();
  EXPECT_THROW(solve_variational_equations(ens), Error);
}

TEST(Adjoint, ZeroCostGivesZeroProcesses) {
  auto ens = ou_pair(100, 1.0, 20);
  const auto a = solve_adjoint_lsmc(ens, k1(1.0), CostSpec::zero());
  for (double v : a.p) EXPECT_EQ(v, 0.0);
  for (double v : a.r) EXPECT_EQ(v, 0.0);
  for (double v : a.q) EXPECT_NEAR(v, 0.0, 1e-14);
  for (double v : a.s) EXPECT_NEAR(v, 0.0, 1e-14);
}

TEST(Adjoint, ConstantCoefficientClosedForm) {
  // -dp = a p dt - q dW, p_T = c has p_t = c e^{a (T - t)} and q = 0.
  const double a = 0.5, c = 1.5, T = 1.0;
  const SdeSystem s = SdeSystem::linear(m1(a), m1(0.3));
  auto ens = make(s, s, v1(1.0), v1(1.0), T, 100, 2000);
  CostSpec cost = CostSpec::zero();
  cost.h_X = [c](const Vector&, const Vector&, const MappingK&) -> Vector { return v1(c); };
  const auto sol = solve_adjoint_lsmc(ens, k1(1.0), cost);
  EXPECT_EQ(sol.terminal_error, 0.0);
  double q_mean = 0.0;
  for (int k = 0; k < sol.n_points; ++k) {
    const double oracle = c * std::exp(a * (T - ens.grid().t(k)));
    for (int p = 0; p < sol.n_paths; p += 97) {
      EXPECT_NEAR(sol.p_at(k, p)[0], oracle, 0.02 * oracle);
      EXPECT_EQ(sol.r_at(k, p)[0], 0.0);
    }
    for (int p = 0; p < sol.n_paths; ++p) q_mean += sol.q_at(k, p)(0, 0);
  }
  q_mean /= static_cast<double>(sol.n_points) * sol.n_paths;
  EXPECT_LE(std::abs(q_mean), 0.05 * c);
  EXPECT_LE(sol.max_residual_ratio, 3.0);
}

TEST(Adjoint, TerminalConditionIsExact) {
  auto ens = ou_pair(300, 1.0, 20);
  const MappingK K = k1(1.5);
  const CostSpec cost = CostSpec::similarity(1.0);
  const auto sol = solve_adjoint_lsmc(ens, K, cost);
  EXPECT_EQ(sol.terminal_error, 0.0);
  const int last = ens.grid().n_steps();
  for (int p = 0; p < ens.n_paths(); ++p) {
    const Vector x = ens.pairs[p].x_vec(last), y = ens.pairs[p].y_vec(last);
    EXPECT_EQ(sol.p_at(last, p)[0], cost.h_X(x, y, K)[0]);
    EXPECT_EQ(sol.r_at(last, p)[0], cost.h_Y(x, y, K)[0]);
  }
  EXPECT_LE(sol.max_residual_ratio, 3.0);
}

namespace {

// E[<p_T, X^_T> + <r_T, Y^_T>] against <p_0, X^_0> + <r_0, Y^_0> - E int <L_X, X^> + <L_Y, Y^> dt.
// The explicit backward scheme pairs with the left-point rule, which makes the
// identity exact in the discrete setting up to the regression error.
void expect_duality(const Ensemble& ens, const MappingK& K, double rel_tol) {
  const double T = ens.grid().horizon();
  const double dt = ens.grid().dt();
  const CostSpec cost = CostSpec::similarity(T);
  const auto adj = solve_adjoint_lsmc(ens, K, cost);
  VariationalOptions vo;
  vo.x_hat0 = v1(1.0);
  vo.y_hat0 = v1(0.5);
  const auto var = solve_variational_equations(ens, vo);
  const int last = ens.grid().n_steps();
  double terminal = 0.0, initial = 0.0, running = 0.0;
  for (int p = 0; p < ens.n_paths(); ++p) {
    terminal += adj.p_at(last, p).dot(var.x_hat_at(p, last)) + adj.r_at(last, p).dot(var.y_hat_at(p, last));
    initial += adj.p_at(0, p).dot(var.x_hat_at(p, 0)) + adj.r_at(0, p).dot(var.y_hat_at(p, 0));
    for (int k = 0; k < last; ++k) {
      const Vector x = ens.pairs[p].x_vec(k), y = ens.pairs[p].y_vec(k);
      running += (cost.L_X(x, y, K).dot(var.x_hat_at(p, k)) + cost.L_Y(x, y, K).dot(var.y_hat_at(p, k))) * dt;
    }
  }
  const double N = ens.n_paths();
  terminal /= N;
  initial /= N;
  running /= N;
  const double scale = std::abs(terminal) + std::abs(initial) + std::abs(running);
  EXPECT_NEAR(terminal, initial - running, rel_tol * scale) << terminal << " " << initial << " " << running;
}

}  // namespace

TEST(Adjoint, DualityWithAdditiveNoise) {
  expect_duality(make(SdeSystem::linear(m1(-1.0), m1(1.0)), SdeSystem::linear(m1(-0.5), m1(2.0)), v1(0.5), v1(0.2),
                      1.0, 100, 4000),
                 k1(1.5), 1e-9);
}

TEST(Adjoint, DualityWithMultiplicativeNoise) {
  const SdeSystem sx(LinearDrift{m1(-1.0)}, LinearInStateDiffusion{{m1(0.4)}});
  const SdeSystem sy(LinearDrift{m1(-0.5)}, LinearInStateDiffusion{{m1(0.2)}});
  expect_duality(make(sx, sy, v1(1.0), v1(0.3), 1.0, 100, 4000), k1(1.5), 1e-9);
}

TEST(Adjoint, CollinearStatesNeedPivoting) {
  // On the output system at K* = 0.5, Y = X / 2 exactly, so X and Y columns coincide.
  auto ens = output_system(200, 1.0, 100);
  AdjointOptions opt;
  opt.drop_dependent = false;
  try {
    solve_adjoint_lsmc(ens, k1(0.5), CostSpec::similarity(1.0), opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IllConditionedRegression);
  }
  opt.drop_dependent = true;
  EXPECT_NO_THROW(solve_adjoint_lsmc(ens, k1(0.5), CostSpec::similarity(1.0), opt));
}

TEST(Hamiltonian, ZeroAdjointsAndCost) {
  const SdeSystem s = SdeSystem::linear(m1(-1.0), m1(1.0));
  const auto h = hamiltonian(v1(0.3), v1(0.4), k1(1.0), v1(0), m1(0), v1(0), m1(0), s, s, CostSpec::zero(),
                             {k1(1.0)});
  EXPECT_EQ(h.H, 0.0);
  ASSERT_EQ(h.H_K.size(), 1u);
  EXPECT_EQ(h.H_K[0], 0.0);
}

TEST(Hamiltonian, InnerProductIdentity) {
  Matrix A(2, 2), B(2, 2), C(2, 2), D(2, 2);
  A << -1, 0.5, 0.2, -2;
  B << 1, 0.3, 0, 0.7;
  C << 0.4, 0, -1, -1;
  D << 0.2, 0.1, 0.1, 0.9;
  const SdeSystem sx = SdeSystem::linear(A, B), sy = SdeSystem::linear(C, D);
  Vector x(2), y(2);
  x << 0.3, -1.2;
  y << 2.0, 0.1;
  const MappingK K = MappingK::identity(2);
  const CostSpec cost = CostSpec::similarity(2.0);
  const Vector f = sx.drift(x, y), g = sy.drift(y, x);
  const Matrix sig = sx.diffusion(x), vs = sy.diffusion(y);
  const auto h = hamiltonian(x, y, K, f, sig, g, vs, sx, sy, cost);
  const double expected =
      f.squaredNorm() + sig.squaredNorm() + g.squaredNorm() + vs.squaredNorm() + cost.L(x, y, K);
  EXPECT_NEAR(h.H, expected, 1e-12 * expected);
  EXPECT_THROW(hamiltonian(x, y, K, v1(0), sig, g, vs, sx, sy, cost), Error);
}

TEST(MaxPrinciple, PassesAtOptimumAndFailsWhenPerturbed) {
  auto ens = output_system(200, 2.0, 400);
  const auto opt = optimize_K(k1(1.0), ens);
  ASSERT_TRUE(opt.converged);
  const CostSpec cost = CostSpec::similarity(2.0);
  const auto probes = random_directions(opt.best_K, 20, 99);
  const auto adj = solve_adjoint_lsmc(ens, opt.best_K, cost);
  const auto rep = maximum_principle_check(ens, opt, adj, probes, cost);
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.adjoint_terminal_error, 0.0);
  // The running part of the estimate is the directional derivative of J.
  for (std::size_t i = 0; i < probes.size(); ++i) {
    const auto d = directional_derivative(ens, opt.best_K, probes[i], 1e-3);
    EXPECT_NEAR(rep.probes[i].estimate, d.value, 1e-6 * std::abs(d.curvature) + 1e-9);
  }

  OptResult bad = opt;
  bad.best_K = k1(1.0);
  const auto adj_bad = solve_adjoint_lsmc(ens, bad.best_K, cost);
  const auto rep_bad = maximum_principle_check(ens, bad, adj_bad, probes, cost);
  EXPECT_FALSE(rep_bad.pass);
  double worst = 0.0;
  for (const auto& p : rep_bad.probes) worst = std::min(worst, p.estimate / std::max(p.std_error, 1e-300));
  EXPECT_LT(worst, -10.0);
}

TEST(MaxPrinciple, IdenticalSystemsAtIdentity) {
  const SdeSystem s = SdeSystem::linear(m1(-0.7), m1(0.5));
  auto ens = make(s, s, v1(1.0), v1(1.0), 1.0, 50, 100);
  OptResult opt;
  opt.best_K = k1(1.0);
  opt.converged = true;
  const CostSpec cost = CostSpec::similarity(1.0);
  const auto probes = random_directions(opt.best_K, 5, 1);
  const auto rep = maximum_principle_check(ens, opt, solve_adjoint_lsmc(ens, opt.best_K, cost), probes, cost);
  EXPECT_TRUE(rep.pass);
  for (const auto& p : rep.probes) EXPECT_EQ(p.estimate, 0.0);
  opt.converged = false;
  EXPECT_THROW(maximum_principle_check(ens, opt, solve_adjoint_lsmc(ens, opt.best_K, cost), probes, cost), Error);
}
