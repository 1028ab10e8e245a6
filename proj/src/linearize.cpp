#include "simil/linearize.hpp"

#include "simil/errors.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>

namespace simil {

namespace {

Vector v1(double v) { return Vector::Constant(1, v); }

void require_scalar_own(const SdeSystem& s, const char* which) {
  if (s.dim() != 1 || s.noise_dim() != 1)
    throw Error(ErrorCode::DimensionMismatch, std::string(which) + " must be scalar with one noise channel");
  if (s.drift_input() != DriftInput::Own)
    throw Error(ErrorCode::InvalidArgument, std::string(which) + " must have an own-state drift");
}

double scalar_drift(const SdeSystem& s, double x) {
  double out = 0.0;
  s.drift_into({&x, 1}, {&out, 1});
  return out;
}

double scalar_diffusion(const SdeSystem& s, double x) {
  double out = 0.0;
  s.diffusion_into({&x, 1}, {&out, 1});
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scalar K* ODE

KstarOdeSolution solve_kstar_ode_1d(const KstarOdeProblem& pb) {
  require_scalar_own(pb.sys_x, "sys_x");
  require_scalar_own(pb.sys_y, "sys_y");
  if (!(pb.x_lo < pb.x_hi) || pb.x0 < pb.x_lo || pb.x0 > pb.x_hi)
    throw Error(ErrorCode::InvalidArgument, "K* ODE range must satisfy x_lo <= x0 <= x_hi with x_lo < x_hi");
  if (pb.ode_steps < 2) throw Error(ErrorCode::InvalidArgument, "K* ODE needs at least 2 steps");

  auto denom = [&](double x) { return scalar_drift(pb.sys_x, x) * scalar_diffusion(pb.sys_x, x); };
  constexpr int kProbes = 1000;
  for (int i = 0; i < kProbes; ++i) {
    const double x = pb.x_lo + (pb.x_hi - pb.x_lo) * i / (kProbes - 1);
    if (std::abs(denom(x)) < 1e-8) throw SingularDenominator(x);
  }
  auto rhs = [&](double x, double K) {
    const double f = scalar_drift(pb.sys_x, x);
    const double sig = scalar_diffusion(pb.sys_x, x);
    if (std::abs(f * sig) < 1e-8) throw SingularDenominator(x);
    return (-f * scalar_diffusion(pb.sys_y, K) + 2.0 * sig * scalar_drift(pb.sys_y, K)) / (f * sig);
  };

  const double span = pb.x_hi - pb.x_lo;
  const int n_left = static_cast<int>(std::lround(pb.ode_steps * (pb.x0 - pb.x_lo) / span));
  const int n_right = pb.ode_steps - n_left;
  std::vector<double> knots(pb.ode_steps + 1), values(pb.ode_steps + 1);
  knots[n_left] = pb.x0;
  values[n_left] = pb.y0;
  auto sweep = [&](int count, double end, int dir) {
    if (count == 0) return;
    const double h = (end - pb.x0) / count;
    double x = pb.x0, K = pb.y0;
    for (int j = 1; j <= count; ++j) {
      const double k1 = rhs(x, K);
      const double k2 = rhs(x + 0.5 * h, K + 0.5 * h * k1);
      const double k3 = rhs(x + 0.5 * h, K + 0.5 * h * k2);
      const double k4 = rhs(x + h, K + h * k3);
      K += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      x = j == count ? end : pb.x0 + j * h;
      if (!std::isfinite(K))
        throw Error(ErrorCode::DivergedTrajectory, "K* ODE solution blew up near x = " + std::to_string(x));
      knots[n_left + dir * j] = x;
      values[n_left + dir * j] = K;
    }
  };
  sweep(n_left, pb.x_lo, -1);
  sweep(n_right, pb.x_hi, +1);

  KstarOdeSolution sol;
  Tabulated1d tab(std::move(knots), std::move(values));
  sol.non_monotone = !tab.is_monotone();
  sol.K = MappingK(std::move(tab));
  return sol;
}

Matrix kstar_matrix_rhs(const SdeSystem& sys_x, const SdeSystem& sys_y, const Vector& x, const Vector& y,
                        const Vector& Kx, double ridge) {
  const int n = sys_x.dim();
  if (x.size() != n || y.size() != n || Kx.size() != n || sys_y.dim() != n || sys_y.noise_dim() != sys_x.noise_dim())
    throw Error(ErrorCode::DimensionMismatch, "K* matrix equation arguments have inconsistent dimensions");
  const Matrix sig = sys_x.diffusion(x);
  const Matrix vs = sys_y.diffusion(y);
  const Vector f = sys_x.drift(x, y);
  const Matrix gram = sig * sig.transpose() + ridge * Matrix::Identity(n, n);
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12)
    throw Error(ErrorCode::SingularDiffusion, "sigma sigma^T is singular (condition above 1e12)");
  const Matrix lhs = vs * sig.transpose() - f * (Kx - y).transpose();
  // X gram = lhs  <=>  gram X^T = lhs^T, gram symmetric.
  return gram.ldlt().solve(lhs.transpose()).transpose();
}

// ---------------------------------------------------------------------------
// Linearisation and the Green kernel

SdeSystem LinearizationPair::cocycle() const { return SdeSystem(LinearDrift{A0}, LinearInStateDiffusion{A}); }

Vector LinearizationPair::remainder(const Vector& x) const { return system.drift(x, x) - A0 * x; }

bool LinearizationPair::deterministic() const {
  for (const Matrix& a : A)
    if (a.cwiseAbs().maxCoeff() > 0.0) return false;
  return true;
}

LinearizationPair linearize_at_fixed_point(const SdeSystem& system) {
  if (system.drift_input() != DriftInput::Own)
    throw Error(ErrorCode::InvalidArgument, "linearisation needs an own-state drift");
  const int n = system.dim();
  const Vector zero = Vector::Zero(n);
  const double f0 = system.drift(zero, zero).cwiseAbs().maxCoeff();
  const double fl = system.diffusion(zero).cwiseAbs().maxCoeff();
  if (f0 > 1e-12 || fl > 1e-12)
    throw Error(ErrorCode::NotAFixedPoint, "0 is not a fixed point: |f0(0)| = " + std::to_string(f0) +
                                               ", |f_l(0)| = " + std::to_string(fl));
  return {system, system.drift_jacobian(zero), system.diffusion_jacobians(zero)};
}

Matrix GreenKernel::operator()(double t) const {
  const int n = static_cast<int>(A0.rows());
  const Matrix E = (A0 * t).exp();
  if (t >= 0.0) return E * P_plus;
  return -E * (Matrix::Identity(n, n) - P_plus);
}

bool GreenKernel::envelope_holds(double t_max, int samples) const {
  for (int i = 0; i < samples; ++i) {
    const double t = samples == 1 ? 0.0 : t_max * i / (samples - 1);
    const Matrix G = (*this)(t);
    const double nrm = G.rows() == 1 ? std::abs(G(0, 0)) : Eigen::JacobiSVD<Matrix>(G).singularValues()[0];
    if (nrm > M_eps * std::exp(rate() * t) * (1.0 + 1e-9)) return false;
  }
  return true;
}

GreenKernel build_green_kernel(const LinearizationPair& pair, const LyapunovSpectrum& spectrum, double epsilon) {
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  const int n = static_cast<int>(pair.A0.rows());
  if (static_cast<int>(spectrum.raw_exponents.size()) != n)
    throw Error(ErrorCode::DimensionMismatch, "spectrum dimension differs from the linearisation");
  for (double l : spectrum.raw_exponents)
    if (l >= 0.0)
      throw Error(ErrorCode::UnsupportedDichotomy,
                  "non-negative Lyapunov exponent " + std::to_string(l) + "; only the all-stable case is supported");
  GreenKernel k;
  k.A0 = pair.A0;
  k.P_plus = Matrix::Identity(n, n);
  k.lambda1 = spectrum.raw_exponents.front();
  k.epsilon = epsilon;
  k.noisy = !pair.deterministic();
  if (!(k.rate() < 0.0)) throw Error(ErrorCode::InvalidArgument, "lambda_1 + epsilon must be negative");

  double M = 1.0;
  constexpr int kSamples = 5001;
  constexpr double kTmax = 50.0;
  for (int i = 1; i < kSamples; ++i) {
    const double t = kTmax * i / (kSamples - 1);
    const Matrix E = (pair.A0 * t).exp();
    const double nrm = n == 1 ? std::abs(E(0, 0)) : Eigen::JacobiSVD<Matrix>(E).singularValues()[0];
    M = std::max(M, nrm * std::exp(-k.rate() * t));
  }
  if (k.noisy) {
    if (std::abs(spectrum.envelope_eps - epsilon) > 1e-12)
      throw Error(ErrorCode::InvalidArgument, "spectrum envelope was measured with a different epsilon");
    M = std::max(M, spectrum.envelope_M);
  }
  k.M_eps = M;
  return k;
}

// ---------------------------------------------------------------------------
// Hartman-Grobman fixed point

double KappaSolution::kappa(double y) const {
  if (grid.empty()) return 0.0;
  if (y <= grid.front()) return values.front();
  if (y >= grid.back()) return values.back();
  const double h = grid[1] - grid[0];
  const std::size_t j = std::min(static_cast<std::size_t>((y - grid.front()) / h), grid.size() - 2);
  const double w = (y - grid[j]) / (grid[j + 1] - grid[j]);
  return (1.0 - w) * values[j] + w * values[j + 1];
}

double KappaSolution::H(double x) const {
  double y = x - kappa(x);
  for (int i = 0; i < 200; ++i) {
    const double next = x - kappa(y);
    const double change = std::abs(next - y);
    y = next;
    if (change <= 1e-16 * (1.0 + std::abs(x))) break;
  }
  return y;
}

double KappaSolution::sup_norm() const {
  double s = 0.0;
  for (double v : values) s = std::max(s, std::abs(v));
  return s;
}

KappaSolution solve_kappa_fixed_point(const LinearizationPair& pair, const GreenKernel& kernel,
                                      const KappaOptions& opt) {
  if (pair.A0.rows() != 1)
    throw Error(ErrorCode::InvalidArgument, "the kappa construction is tabulated for scalar systems only");
  if (!pair.deterministic() || kernel.noisy)
    throw Error(ErrorCode::InvalidArgument, "the kappa construction needs noise-free linear coefficients");
  if (opt.grid_size < 3 || !(opt.tol > 0.0) || opt.max_iter < 1 || !(opt.ds > 0.0))
    throw Error(ErrorCode::InvalidArgument, "kappa options need grid_size >= 3, tol > 0, max_iter >= 1, ds > 0");

  const SdeSystem& sys = pair.system;
  const double a = pair.A0(0, 0);
  const double rate = kernel.rate();
  const double M = kernel.M_eps;
  auto gamma = [&](double x) { return scalar_drift(sys, x) - a * x; };

  auto sup_on_ball = [](double radius, auto&& fn) {
    constexpr int kPts = 2001;
    double s = 0.0;
    for (int i = 0; i < kPts; ++i) s = std::max(s, std::abs(fn(-radius + 2.0 * radius * i / (kPts - 1))));
    return s;
  };
  auto hessian = [&](double x) { return sys.drift_hessian(v1(x), 0)(0, 0); };

  KappaSolution sol;
  sol.A0 = a;
  double delta = opt.delta;
  if (!(delta > 0.0)) {
    // delta = -(lambda_1 + eps) / (4 c M) with c a bound on |D^2 f0| over a ball that contains B_delta.
    delta = 1.0;
    for (int it = 0; it < 20; ++it) {
      const double c = sup_on_ball(std::max(1.0, delta), hessian);
      sol.hessian_bound = c;
      if (c == 0.0) break;
      const double next = -rate / (4.0 * c * M);
      const bool settled = std::abs(next - delta) <= 1e-12 * delta;
      delta = next;
      if (settled || delta <= 1.0) break;
    }
  } else {
    sol.hessian_bound = sup_on_ball(delta, hessian);
  }
  sol.delta = delta;
  sol.lipschitz_gamma = sup_on_ball(delta, [&](double x) { return sys.drift_jacobian(v1(x))(0, 0) - a; });
  sol.contraction_bound = 2.0 * M * sol.lipschitz_gamma / -rate;
  if (sol.contraction_bound > 0.9)
    throw Error(ErrorCode::ContractionViolated,
                "contraction bound " + std::to_string(sol.contraction_bound) + " exceeds 0.9; shrink the ball");

  const double sup_gamma = sup_on_ball(delta, gamma);
  sol.half_width = delta + 2.0 * M * sup_gamma / -rate;
  const int G = opt.grid_size;
  sol.grid.resize(G);
  for (int j = 0; j < G; ++j) sol.grid[j] = -sol.half_width + 2.0 * sol.half_width * j / (G - 1);
  sol.values.assign(G, 0.0);

  // Beyond S the kernel envelope is below 1e-8 delta. The panel count is a
  // multiple of 4 so the same nodes also give a Simpson rule at 2 ds.
  const double S = std::log(M / (1e-8 * delta)) / -rate;
  int n_s = static_cast<int>(std::ceil(S / opt.ds));
  n_s = std::max(4, (n_s + 3) / 4 * 4);
  const double h = S / n_s;
  std::vector<double> fwd(n_s + 1), back(n_s + 1);
  for (int i = 0; i <= n_s; ++i) {
    fwd[i] = std::exp(a * i * h);    // G(s)
    back[i] = std::exp(-a * i * h);  // Phi(-s)
  }
  auto gamma_tilde = [&](double w) { return gamma(std::abs(w) > delta ? std::copysign(delta, w) : w); };
  auto apply = [&](const KappaSolution& k, double y, int stride) {
    const int panels = n_s / stride;
    const double hs = h * stride;
    double sum = 0.0;
    for (int p = 0; p <= panels; ++p) {
      const int i = p * stride;
      const double z = back[i] * y;
      const double val = fwd[i] * gamma_tilde(z + k.kappa(z));
      const double w = (p == 0 || p == panels) ? 1.0 : (p % 2 == 1 ? 4.0 : 2.0);
      sum += w * val;
    }
    return sum * hs / 3.0;
  };

  std::vector<double> next(G);
  double prev_res = 0.0;
  int growing = 0;
  for (int it = 1; it <= opt.max_iter; ++it) {
    for (int j = 0; j < G; ++j) next[j] = apply(sol, sol.grid[j], 1);
    double res = 0.0, scale = 0.0;
    for (int j = 0; j < G; ++j) {
      res = std::max(res, std::abs(next[j] - sol.values[j]));
      scale = std::max(scale, std::abs(next[j]));
    }
    sol.values = next;
    sol.iterations_used = it;
    sol.final_residual = res;
    sol.residual_history.push_back(res);
    // Ratios of updates at rounding level carry no information.
    const double noise_floor = 1e-13 * (1.0 + scale);
    if (it > 1 && prev_res > noise_floor && res > noise_floor) {
      const double ratio = res / prev_res;
      sol.contraction_factor_observed = std::max(sol.contraction_factor_observed, ratio);
      growing = ratio > 1.0 ? growing + 1 : 0;
      if (growing >= 3)
        throw Error(ErrorCode::ContractionViolated, "kappa updates grew for 3 consecutive iterations");
    }
    prev_res = res;
    if (res <= opt.tol) break;
  }

  for (int j = 0; j + 1 < G; ++j) {
    const double mid = 0.5 * (sol.grid[j] + sol.grid[j + 1]);
    sol.interpolation_error = std::max(sol.interpolation_error, std::abs(apply(sol, mid, 1) - sol.kappa(mid)));
  }
  for (int j = 0; j < G; ++j)
    sol.quadrature_error =
        std::max(sol.quadrature_error, std::abs(apply(sol, sol.grid[j], 1) - apply(sol, sol.grid[j], 2)) / 15.0);
  return sol;
}

double flow_commutation_defect(const LinearizationPair& pair, const KappaSolution& kappa, double t_max, int n_probes,
                               double rk_dt) {
  if (pair.A0.rows() != 1) throw Error(ErrorCode::InvalidArgument, "flow commutation check is scalar only");
  if (n_probes < 2 || !(rk_dt > 0.0) || !(t_max > 0.0))
    throw Error(ErrorCode::InvalidArgument, "flow commutation check needs n_probes >= 2, rk_dt > 0, t_max > 0");
  const SdeSystem& sys = pair.system;
  const double a = pair.A0(0, 0);
  const int steps = std::max(1, static_cast<int>(std::lround(t_max / rk_dt)));
  const double h = t_max / steps;
  const int every = std::max(1, steps / 10);
  double worst = 0.0;
  for (int p = 0; p < n_probes; ++p) {
    const double x0 = -kappa.delta + 2.0 * kappa.delta * p / (n_probes - 1);
    const double h0 = kappa.H(x0);
    double x = x0;
    for (int k = 1; k <= steps; ++k) {
      const double k1 = scalar_drift(sys, x);
      const double k2 = scalar_drift(sys, x + 0.5 * h * k1);
      const double k3 = scalar_drift(sys, x + 0.5 * h * k2);
      const double k4 = scalar_drift(sys, x + h * k3);
      x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      if (k % every == 0 || k == steps)
        worst = std::max(worst, std::abs(kappa.H(x) - std::exp(a * k * h) * h0));
    }
  }
  return worst;
}

CostEstimate verify_conjugacy_defect(const LinearizationPair& pair, const KappaSolution& kappa,
                                     const Ensemble& ensemble) {
  if (ensemble.dim() != 1 || pair.A0.rows() != 1)
    throw Error(ErrorCode::DimensionMismatch, "pre-exit conjugacy check is scalar only");
  std::vector<double> samples;
  for (const auto& pr : ensemble.pairs) {
    double sum = 0.0;
    int count = 0;
    for (int k = 0; k < ensemble.grid().n_points(); ++k) {
      const double x = pr.x_at(k)[0];
      if (std::abs(x) > kappa.delta) break;
      sum += std::abs(kappa.H(x) - pr.y_at(k)[0]);
      ++count;
    }
    if (count > 0) samples.push_back(sum / count);
  }
  if (samples.empty())
    throw Error(ErrorCode::AllPathsExitImmediately, "every path starts outside the ball of radius " +
                                                         std::to_string(kappa.delta));
  return summarize(samples, ensemble.grid().dt(), CostKind::PreExitDefect);
}

}  // namespace simil
