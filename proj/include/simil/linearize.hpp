#pragma once

// Explicit K* constructions: the scalar K* ODE, the matrix form of its
// right-hand side, and the Hartman-Grobman conjugacy near a stable fixed point.

#include "simil/conditions.hpp"
#include "simil/functional.hpp"
#include "simil/mapping.hpp"
#include "simil/sde_core.hpp"

#include <vector>

namespace simil {

struct KstarOdeProblem {
  SdeSystem sys_x, sys_y;  // scalar, one noise channel, own-state drifts
  double x0 = 0.0, y0 = 0.0;
  double x_lo = -1.0, x_hi = 1.0;
  int ode_steps = 1000;
};

struct KstarOdeSolution {
  MappingK K;  // tabulated on ode_steps + 1 knots
  /// Set when the tabulated values are not strictly monotone, so K is no homeomorphism.
  bool non_monotone = false;
};

/// RK4 for dK/dx = (-f(x) vs(K) + 2 sigma(x) g(K)) / (f(x) sigma(x)), K(x0) = y0,
/// integrated outward from x0 to both ends. Throws SingularDenominator.
KstarOdeSolution solve_kstar_ode_1d(const KstarOdeProblem& problem);

inline constexpr double kDiffusionRidge = 1e-10;

/// [vs(y) sigma(x)^T - f(x) (Kx - y)^T] (sigma sigma^T + ridge I)^{-1}.
/// Throws SingularDiffusion when the regularised Gram matrix has condition above 1e12.
Matrix kstar_matrix_rhs(const SdeSystem& sys_x, const SdeSystem& sys_y, const Vector& x, const Vector& y,
                        const Vector& Kx, double ridge = kDiffusionRidge);

struct LinearizationPair {
  SdeSystem system;
  Matrix A0;
  std::vector<Matrix> A;  // one per noise channel

  /// dX = A0 X dt + sum_l A_l X dW_l.
  SdeSystem cocycle() const;
  /// gamma(x) = f0(x) - A0 x.
  Vector remainder(const Vector& x) const;
  bool deterministic() const;
};

/// Throws NotAFixedPoint unless the drift and every diffusion column vanish at 0 (within 1e-12).
LinearizationPair linearize_at_fixed_point(const SdeSystem& system);

struct GreenKernel {
  Matrix A0;
  Matrix P_plus;  // identity in the supported all-stable case
  double lambda1 = 0.0;
  double epsilon = 0.0;
  double M_eps = 1.0;
  bool noisy = false;

  double rate() const noexcept { return lambda1 + epsilon; }
  /// e^{A0 t} P+ for t >= 0 and -e^{A0 t} P- for t < 0 (the noise-free kernel).
  Matrix operator()(double t) const;
  /// |G(t)| <= M_eps e^{rate |t|} on `samples` points of [0, t_max].
  bool envelope_holds(double t_max, int samples) const;
};

/// Throws UnsupportedDichotomy if any exponent is >= 0. M_eps is measured on
/// [0, 50] for the noise-free flow and taken from the spectrum's envelope otherwise.
GreenKernel build_green_kernel(const LinearizationPair& pair, const LyapunovSpectrum& spectrum, double epsilon);

struct KappaOptions {
  double delta = 0.0;  // 0 selects -(lambda_1 + eps) / (4 c M_eps)
  int grid_size = 401;
  double tol = 1e-12;
  int max_iter = 200;
  double ds = 0.005;
};

struct KappaSolution {
  double delta = 0.0;       // ball radius
  double half_width = 0.0;  // grid covers [-half_width, half_width]
  double hessian_bound = 0.0;
  double lipschitz_gamma = 0.0;
  double contraction_bound = 0.0;  // 2 M_eps Lip(gamma) / -(lambda_1 + eps)
  std::vector<double> grid, values;
  int iterations_used = 0;
  double final_residual = 0.0;
  double contraction_factor_observed = 0.0;
  std::vector<double> residual_history;
  double interpolation_error = 0.0;  // fixed-point map vs interpolant at cell midpoints
  double quadrature_error = 0.0;     // Simpson at ds vs 2 ds, Richardson-scaled
  double A0 = 0.0;

  /// Linear interpolation, clamped to the grid ends.
  double kappa(double y) const;
  /// y + kappa(y): linear coordinates to nonlinear ones.
  double conj(double y) const { return y + kappa(y); }
  /// H = (I + kappa)^{-1}: nonlinear coordinates to linear ones.
  double H(double x) const;
  double sup_norm() const;
};

/// Picard iteration for kappa(y) = int_0^S G(s) gamma~(Phi(-s) y + kappa(Phi(-s) y)) ds, where
/// gamma~ is the remainder with its argument radially retracted onto the ball of radius delta.
/// Scalar noise-free pairs only. Throws ContractionViolated when the measured bound
/// exceeds 0.9 or the update fails to shrink for 3 consecutive iterations.
KappaSolution solve_kappa_fixed_point(const LinearizationPair& pair, const GreenKernel& kernel,
                                      const KappaOptions& options = {});

/// sup over x in the ball and t in [0, t_max] of |H(phi_t(x)) - e^{A0 t} H(x)|, with the
/// nonlinear flow from RK4 at step rk_dt.
double flow_commutation_defect(const LinearizationPair& pair, const KappaSolution& kappa, double t_max = 1.0,
                               int n_probes = 41, double rk_dt = 1e-3);

/// Per path, the mean of |H(X_t) - Y_t| over the grid points before X first leaves the
/// ball. Paths leaving at t = 0 are skipped; throws AllPathsExitImmediately if all do.
CostEstimate verify_conjugacy_defect(const LinearizationPair& pair, const KappaSolution& kappa,
                                     const Ensemble& ensemble);

}  // namespace simil
