#pragma once

// Minimising the cost functional over a map family on a fixed ensemble, and
// the first-order optimality machinery: variational equations, adjoint BSDEs
// by least-squares Monte Carlo, and the Hamiltonian gradient condition.

#include "simil/functional.hpp"
#include "simil/mapping.hpp"
#include "simil/sde_core.hpp"

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

namespace simil {

/// Running cost L(x, y, K) and terminal cost h(x, y, K) with their partials.
/// `L_K` and `h_K` return the directional derivative along a map direction.
struct CostSpec {
  std::function<double(const Vector&, const Vector&, const MappingK&)> L, h;
  std::function<Vector(const Vector&, const Vector&, const MappingK&)> L_X, L_Y, h_X, h_Y;
  std::function<double(const Vector&, const Vector&, const MappingK&, const MappingK&)> L_K, h_K;

  /// L = (1/T)|Kx - y|^2, h = |Kx - y|; the h partials vanish where Kx = y.
  static CostSpec similarity(double T);
  static CostSpec zero();
};

/// d/de (K + e dir)(x) at e = 0. Exact for linear and affine maps, a central
/// difference for tabulated maps whose slopes depend nonlinearly on the values.
Vector map_direction(const MappingK& K, const MappingK& dir, const Vector& x);

/// `count` random parameter directions of unit Euclidean norm, same family as K.
std::vector<MappingK> random_directions(const MappingK& K, int count, std::uint64_t seed);

struct OptOptions {
  int max_iter = 400;
  double step = 0.1;
  int restarts = 5;
  double tol = 1e-6;
  std::uint64_t seed = 0;
  bool terminal_objective = false;  // minimise J~ instead of J
};

struct OptResult {
  MappingK best_K;
  CostEstimate J_best;
  CostEstimate J_initial;
  std::vector<std::pair<int, double>> trace;  // (iteration, best objective)
  bool converged = false;
  double final_diameter = 0.0;
  int evaluations = 0;
  HomeoReport homeo;
};

inline constexpr double kInvertibilityPenalty = 1e6;

/// Nelder-Mead on the family parameters with restarts. Maps that fail the
/// invertibility bound are penalised by 1e6. Throws AllRestartsNonInvertible.
OptResult optimize_K(const MappingK& family, const Ensemble& ensemble, const OptOptions& options = {});

struct DerivativeEstimate {
  double value = 0.0;
  double std_error = 0.0;
  /// Second difference (J(K+e d) - 2J(K) + J(K-e d)) / e^2 on the same ensemble.
  double curvature = 0.0;
};

/// Central difference of J along `direction` on the same ensemble. Throws
/// StepTooLarge if K +- eps direction is not invertible.
DerivativeEstimate directional_derivative(const Ensemble& ensemble, const MappingK& K,
                                          const MappingK& direction, double eps);

struct VariationalOptions {
  /// Initial perturbations; empty means zero.
  Vector x_hat0, y_hat0;
  /// Constant drift forcing added to each linearised system; empty means none.
  Vector forcing_x, forcing_y;
};

struct VariationalSolution {
  int dim = 0;
  int n_points = 0;
  std::vector<std::vector<double>> x_hat, y_hat;  // per path, n_points x n row-major

  Vector x_hat_at(int path, int k) const;
  Vector y_hat_at(int path, int k) const;
};

/// Euler-Maruyama for dX^ = f_X X^ dt + sigma_X X^ dW (and the Y analogue)
/// along each stored path. Needs the ensemble's Brownian increments.
VariationalSolution solve_variational_equations(const Ensemble& ensemble,
                                                const VariationalOptions& options = {});

struct AdjointOptions {
  int basis_degree = 2;
  bool drop_dependent = true;
};

struct AdjointSolution {
  int dim = 0;
  int noise_dim = 0;
  int n_paths = 0;
  int n_points = 0;
  std::vector<double> p, q, r, s;
  /// max over steps and components of |mean residual| / std_error of the
  /// one-step identity p_{k+1} + generator dt - p_k.
  double max_residual_ratio = 0.0;
  /// max over paths of |p_T - h_X| and |r_T - h_Y|.
  double terminal_error = 0.0;

  Vector p_at(int k, int path) const;
  Vector r_at(int k, int path) const;
  Matrix q_at(int k, int path) const;  // n x d; zero at k = T
  Matrix s_at(int k, int path) const;
};

/// Backward induction with regressions on polynomials in (X, Y). Needs n <= 3
/// and the Brownian increments. Throws IllConditionedRegression if the kept
/// basis has Gram condition above 1e10.
AdjointSolution solve_adjoint_lsmc(const Ensemble& ensemble, const MappingK& K, const CostSpec& cost,
                                   const AdjointOptions& options = {});

struct HamiltonianEval {
  double H = 0.0;
  std::vector<double> H_K;  // <H_K, dir> per probe direction; equals <L_K, dir>
};

HamiltonianEval hamiltonian(const Vector& x, const Vector& y, const MappingK& K, const Vector& p,
                            const Matrix& q, const Vector& r, const Matrix& s, const SdeSystem& sys_x,
                            const SdeSystem& sys_y, const CostSpec& cost,
                            const std::vector<MappingK>& probes = {});

struct ProbeCheck {
  double estimate = 0.0;   // E int_0^T <H_K, dir> dt
  double std_error = 0.0;
  /// Optimiser resolution floor: directional curvature times the final simplex diameter.
  double floor = 0.0;
  bool pass = false;
};

struct MaxPrincipleReport {
  std::vector<ProbeCheck> probes;
  bool pass = false;
  double mean_hamiltonian = 0.0;  // E (1/T) int H dt along the adjoint solution
  double adjoint_terminal_error = 0.0;
};

/// PASS when every probe estimate is >= -(3 std_error + floor).
MaxPrincipleReport maximum_principle_check(const Ensemble& ensemble, const OptResult& opt,
                                           const AdjointSolution& adjoint, const std::vector<MappingK>& probes,
                                           const CostSpec& cost);

}  // namespace simil
