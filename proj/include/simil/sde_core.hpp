#pragma once

// System pairs driven by one shared Brownian motion, their Euler-Maruyama
// discretisation on a uniform grid, and analytic moments of linear SDEs.

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace simil {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Uniform grid on [0, T]. Point k sits at k*dt; the last point is exactly T.
class TimeGrid {
 public:
  TimeGrid() = default;
  TimeGrid(double horizon, int n_steps);

  double horizon() const noexcept { return horizon_; }
  int n_steps() const noexcept { return n_steps_; }
  int n_points() const noexcept { return n_steps_ + 1; }
  double dt() const noexcept { return dt_; }
  double t(int k) const noexcept { return k == n_steps_ ? horizon_ : k * dt_; }

  /// Index of t if it lies on the grid (within 1e-9 dt), otherwise nullopt.
  std::optional<int> index_of(double t) const noexcept;

  bool operator==(const TimeGrid&) const = default;

 private:
  double horizon_ = 1.0;
  int n_steps_ = 1;
  double dt_ = 1.0;
};

struct BrownianPath {
  TimeGrid grid;
  int noise_dim = 1;
  std::uint64_t seed = 0;
  std::uint64_t path_index = 0;
  /// n_steps x noise_dim, row-major by step. Empty for ensembles loaded from CSV.
  std::vector<double> increments;

  bool has_increments() const noexcept { return !increments.empty(); }
  std::span<const double> increment(int k) const {
    return {increments.data() + static_cast<std::size_t>(k) * noise_dim,
            static_cast<std::size_t>(noise_dim)};
  }
  /// W_l(t_k), with W(0) = 0.
  double w(int k, int l) const;
};

/// i.i.d. N(0, dt) increments, a pure function of (grid, noise_dim, seed, path_index).
BrownianPath generate_brownian_path(const TimeGrid& grid, int noise_dim, std::uint64_t seed,
                                    std::uint64_t path_index);

struct Monomial {
  double coef = 0.0;
  std::vector<int> powers;
  bool operator==(const Monomial&) const = default;
};

/// Multivariate polynomial of total degree at most 3.
class Polynomial {
 public:
  Polynomial() = default;
  Polynomial(int n_vars, std::vector<Monomial> terms);

  static Polynomial zero(int n_vars) { return Polynomial(n_vars, {}); }

  int n_vars() const noexcept { return n_vars_; }
  const std::vector<Monomial>& terms() const noexcept { return terms_; }
  int degree() const noexcept;

  double eval(std::span<const double> x) const;
  double partial(std::span<const double> x, int var) const;
  double second_partial(std::span<const double> x, int var_a, int var_b) const;

  bool operator==(const Polynomial&) const = default;

 private:
  int n_vars_ = 0;
  std::vector<Monomial> terms_;
};

struct LinearDrift {
  Matrix A;
};
struct AffineDrift {
  Matrix A;
  Vector a;
};
struct PolynomialDrift {
  std::vector<Polynomial> components;
};
struct ConstantDiffusion {
  Matrix B;  // n x d
};
/// sigma(x) = (A_1 x, ..., A_d x).
struct LinearInStateDiffusion {
  std::vector<Matrix> A;
};
struct PolynomialDiffusion {
  int noise_dim = 1;
  std::vector<Polynomial> entries;  // n x d, row-major
};

using DriftSpec = std::variant<LinearDrift, AffineDrift, PolynomialDrift>;
using DiffusionSpec = std::variant<ConstantDiffusion, LinearInStateDiffusion, PolynomialDiffusion>;

/// Which state the drift is evaluated on. `Partner` lets the second system of a
/// pair read the first system's state, as in an output system dY = C X dt + D dW.
enum class DriftInput { Own, Partner };

class SdeSystem {
 public:
  SdeSystem() = default;
  SdeSystem(DriftSpec drift, DiffusionSpec diffusion, DriftInput input = DriftInput::Own);

  static SdeSystem linear(const Matrix& A, const Matrix& B,
                          DriftInput input = DriftInput::Own);

  int dim() const noexcept { return n_; }
  int noise_dim() const noexcept { return d_; }
  const DriftSpec& drift_spec() const noexcept { return drift_; }
  const DiffusionSpec& diffusion_spec() const noexcept { return diffusion_; }
  DriftInput drift_input() const noexcept { return input_; }

  /// Drift evaluated on `arg`, which is the own state or the partner state
  /// according to drift_input().
  void drift_into(std::span<const double> arg, std::span<double> out) const;
  /// n x d diffusion value, row-major.
  void diffusion_into(std::span<const double> x, std::span<double> out) const;

  Vector drift(const Vector& own, const Vector& partner) const;
  Matrix diffusion(const Vector& x) const;

  /// Jacobian of the drift with respect to its argument.
  Matrix drift_jacobian(const Vector& arg) const;
  /// d(sigma column l)/dx for each channel l.
  std::vector<Matrix> diffusion_jacobians(const Vector& x) const;
  /// Hessian of drift component i with respect to its argument.
  Matrix drift_hessian(const Vector& arg, int component) const;

  /// Linear or affine drift with constant diffusion: eligible for the batched kernels.
  bool is_linear_constant() const noexcept;

  bool operator==(const SdeSystem& other) const;

 private:
  DriftSpec drift_ = LinearDrift{};
  DiffusionSpec diffusion_ = ConstantDiffusion{};
  DriftInput input_ = DriftInput::Own;
  int n_ = 0;
  int d_ = 0;
};

struct PathPair {
  TimeGrid grid;
  int dim = 1;
  BrownianPath path;
  std::vector<double> x;  // (n_steps+1) x n, row-major
  std::vector<double> y;

  std::span<const double> x_at(int k) const {
    return {x.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
  }
  std::span<const double> y_at(int k) const {
    return {y.data() + static_cast<std::size_t>(k) * dim, static_cast<std::size_t>(dim)};
  }
  Vector x_vec(int k) const;
  Vector y_vec(int k) const;
};

inline constexpr double kDefaultBlowupBound = 1e12;

struct EnsembleConfig {
  SdeSystem sys_x;
  SdeSystem sys_y;
  Vector x0;
  Vector y0;
  TimeGrid grid;
  int n_paths = 1;
  std::uint64_t master_seed = 0;
  int workers = 1;
  double blowup_bound = kDefaultBlowupBound;
};

struct Ensemble {
  EnsembleConfig config;
  std::vector<PathPair> pairs;

  int dim() const noexcept { return pairs.empty() ? config.sys_x.dim() : pairs.front().dim; }
  int n_paths() const noexcept { return static_cast<int>(pairs.size()); }
  const TimeGrid& grid() const noexcept { return config.grid; }
};

/// Euler-Maruyama for both systems with the same increments. Throws
/// DivergedTrajectory when a state leaves the blow-up ball or turns non-finite.
PathPair simulate_pair(const SdeSystem& sys_x, const SdeSystem& sys_y, const Vector& x0,
                       const Vector& y0, const BrownianPath& path,
                       double blowup_bound = kDefaultBlowupBound);

/// Path i uses the substream (master_seed, i); output is identical for any worker count.
Ensemble simulate_ensemble(const EnsembleConfig& config);

struct GaussianMoments {
  Vector mean;
  Matrix cov;
};

/// mean = e^{At} x0, cov = int_0^t e^{As} B B^T e^{A^T s} ds (Simpson, step t/1e5).
GaussianMoments ou_moments_oracle(const Matrix& A, const Matrix& B, const Vector& x0, double t);

/// CSV layout `t,path,x1..xn,y1..yn`, one row per (path, grid point).
void write_ensemble_csv(std::ostream& out, const Ensemble& ensemble);
/// Reads the CSV layout back. Systems are not part of the file; the returned
/// ensemble carries the grid, dimensions and trajectories, with empty increments.
Ensemble read_ensemble_csv(std::istream& in);

}  // namespace simil
