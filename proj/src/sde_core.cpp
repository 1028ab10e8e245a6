#include "simil/sde_core.hpp"

#include "simil/errors.hpp"
#include "simil/kernels.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

namespace simil {

// ---------------------------------------------------------------------------
// TimeGrid / BrownianPath

TimeGrid::TimeGrid(double horizon, int n_steps) {
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw Error(ErrorCode::InvalidArgument, "time grid horizon must be positive and finite");
  if (n_steps < 1) throw Error(ErrorCode::InvalidArgument, "time grid needs n_steps >= 1");
  horizon_ = horizon;
  n_steps_ = n_steps;
  dt_ = horizon / n_steps;
}

std::optional<int> TimeGrid::index_of(double t) const noexcept {
  if (!std::isfinite(t)) return std::nullopt;
  const double k = std::round(t / dt_);
  if (k < 0 || k > n_steps_) return std::nullopt;
  if (std::abs(t - this->t(static_cast<int>(k))) > 1e-9 * dt_) return std::nullopt;
  return static_cast<int>(k);
}

double BrownianPath::w(int k, int l) const {
  double acc = 0.0;
  for (int j = 0; j < k; ++j) acc += increments[static_cast<std::size_t>(j) * noise_dim + l];
  return acc;
}

namespace {

std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream key for (seed, counter): two rounds of SplitMix64 keep neighbouring
// counters far apart in the Mersenne Twister seed space.
std::uint64_t substream_key(std::uint64_t seed, std::uint64_t counter) {
  return splitmix64(splitmix64(seed) ^ splitmix64(counter * 0xd1b54a32d192ed03ULL + 1));
}

}  // namespace

BrownianPath generate_brownian_path(const TimeGrid& grid, int noise_dim, std::uint64_t seed,
                                    std::uint64_t path_index) {
  if (noise_dim < 1) throw Error(ErrorCode::InvalidArgument, "noise dimension must be >= 1");
  BrownianPath path;
  path.grid = grid;
  path.noise_dim = noise_dim;
  path.seed = seed;
  path.path_index = path_index;
  path.increments.resize(static_cast<std::size_t>(grid.n_steps()) * noise_dim);
  std::mt19937_64 engine(substream_key(seed, path_index));
  std::normal_distribution<double> normal(0.0, 1.0);
  const double scale = std::sqrt(grid.dt());
  for (double& dw : path.increments) dw = scale * normal(engine);
  return path;
}

// ---------------------------------------------------------------------------
// Polynomial

namespace {

double ipow(double x, int p) {
  double r = 1.0;
  for (int i = 0; i < p; ++i) r *= x;
  return r;
}

}  // namespace

Polynomial::Polynomial(int n_vars, std::vector<Monomial> terms)
    : n_vars_(n_vars), terms_(std::move(terms)) {
  if (n_vars < 1) throw Error(ErrorCode::InvalidArgument, "polynomial needs at least one variable");
  for (const Monomial& m : terms_) {
    if (static_cast<int>(m.powers.size()) != n_vars)
      throw Error(ErrorCode::DimensionMismatch, "monomial exponent count differs from n_vars");
    int total = 0;
    for (int p : m.powers) {
      if (p < 0) throw Error(ErrorCode::InvalidArgument, "negative monomial exponent");
      total += p;
    }
    if (total > 3) throw Error(ErrorCode::InvalidArgument, "polynomial degree exceeds 3");
    if (!std::isfinite(m.coef)) throw Error(ErrorCode::InvalidArgument, "non-finite coefficient");
  }
}

int Polynomial::degree() const noexcept {
  int deg = 0;
  for (const Monomial& m : terms_) {
    int total = 0;
    for (int p : m.powers) total += p;
    deg = std::max(deg, total);
  }
  return deg;
}

double Polynomial::eval(std::span<const double> x) const {
  double acc = 0.0;
  for (const Monomial& m : terms_) {
    double v = m.coef;
    for (int k = 0; k < n_vars_; ++k) v *= ipow(x[k], m.powers[k]);
    acc += v;
  }
  return acc;
}

double Polynomial::partial(std::span<const double> x, int var) const {
  double acc = 0.0;
  for (const Monomial& m : terms_) {
    const int p = m.powers[var];
    if (p == 0) continue;
    double v = m.coef * p;
    for (int k = 0; k < n_vars_; ++k) v *= ipow(x[k], k == var ? p - 1 : m.powers[k]);
    acc += v;
  }
  return acc;
}

double Polynomial::second_partial(std::span<const double> x, int a, int b) const {
  double acc = 0.0;
  for (const Monomial& m : terms_) {
    std::vector<int> pw = m.powers;
    double v = m.coef;
    v *= pw[a];
    if (pw[a] == 0) continue;
    pw[a] -= 1;
    v *= pw[b];
    if (pw[b] == 0) continue;
    pw[b] -= 1;
    for (int k = 0; k < n_vars_; ++k) v *= ipow(x[k], pw[k]);
    acc += v;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// SdeSystem

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

SdeSystem::SdeSystem(DriftSpec drift, DiffusionSpec diffusion, DriftInput input)
    : drift_(std::move(drift)), diffusion_(std::move(diffusion)), input_(input) {
  n_ = std::visit(overloaded{
                      [](const LinearDrift& s) {
                        if (s.A.rows() != s.A.cols() || s.A.rows() < 1)
                          throw Error(ErrorCode::DimensionMismatch, "drift matrix must be square");
                        if (!all_finite(s.A)) throw Error(ErrorCode::InvalidArgument, "non-finite drift");
                        return static_cast<int>(s.A.rows());
                      },
                      [](const AffineDrift& s) {
                        if (s.A.rows() != s.A.cols() || s.A.rows() < 1 || s.a.size() != s.A.rows())
                          throw Error(ErrorCode::DimensionMismatch, "affine drift dimensions differ");
                        if (!all_finite(s.A) || !s.a.allFinite())
                          throw Error(ErrorCode::InvalidArgument, "non-finite drift");
                        return static_cast<int>(s.A.rows());
                      },
                      [](const PolynomialDrift& s) {
                        const int n = static_cast<int>(s.components.size());
                        if (n < 1) throw Error(ErrorCode::DimensionMismatch, "empty polynomial drift");
                        for (const Polynomial& p : s.components)
                          if (p.n_vars() != n)
                            throw Error(ErrorCode::DimensionMismatch,
                                        "polynomial drift variable count differs from dimension");
                        return n;
                      }},
                  drift_);
  d_ = std::visit(overloaded{
                      [this](const ConstantDiffusion& s) {
                        if (s.B.rows() != n_ || s.B.cols() < 1)
                          throw Error(ErrorCode::DimensionMismatch, "diffusion matrix must be n x d");
                        if (!all_finite(s.B)) throw Error(ErrorCode::InvalidArgument, "non-finite diffusion");
                        return static_cast<int>(s.B.cols());
                      },
                      [this](const LinearInStateDiffusion& s) {
                        if (s.A.empty())
                          throw Error(ErrorCode::DimensionMismatch, "need at least one noise channel");
                        for (const Matrix& m : s.A) {
                          if (m.rows() != n_ || m.cols() != n_)
                            throw Error(ErrorCode::DimensionMismatch,
                                        "state-linear diffusion matrices must be n x n");
                          if (!all_finite(m)) throw Error(ErrorCode::InvalidArgument, "non-finite diffusion");
                        }
                        return static_cast<int>(s.A.size());
                      },
                      [this](const PolynomialDiffusion& s) {
                        if (s.noise_dim < 1 ||
                            static_cast<int>(s.entries.size()) != n_ * s.noise_dim)
                          throw Error(ErrorCode::DimensionMismatch,
                                      "polynomial diffusion needs n*d entries");
                        for (const Polynomial& p : s.entries)
                          if (p.n_vars() != n_)
                            throw Error(ErrorCode::DimensionMismatch,
                                        "polynomial diffusion variable count differs from dimension");
                        return s.noise_dim;
                      }},
                  diffusion_);
}

SdeSystem SdeSystem::linear(const Matrix& A, const Matrix& B, DriftInput input) {
  return SdeSystem(LinearDrift{A}, ConstantDiffusion{B}, input);
}

void SdeSystem::drift_into(std::span<const double> arg, std::span<double> out) const {
  std::visit(overloaded{
                 [&](const LinearDrift& s) {
                   for (int i = 0; i < n_; ++i) {
                     double acc = 0.0;
                     for (int k = 0; k < n_; ++k) acc += s.A(i, k) * arg[k];
                     out[i] = acc;
                   }
                 },
                 [&](const AffineDrift& s) {
                   for (int i = 0; i < n_; ++i) {
                     double acc = 0.0;
                     for (int k = 0; k < n_; ++k) acc += s.A(i, k) * arg[k];
                     acc += s.a[i];
                     out[i] = acc;
                   }
                 },
                 [&](const PolynomialDrift& s) {
                   for (int i = 0; i < n_; ++i) out[i] = s.components[i].eval(arg);
                 }},
             drift_);
}

void SdeSystem::diffusion_into(std::span<const double> x, std::span<double> out) const {
  std::visit(overloaded{
                 [&](const ConstantDiffusion& s) {
                   for (int i = 0; i < n_; ++i)
                     for (int l = 0; l < d_; ++l) out[i * d_ + l] = s.B(i, l);
                 },
                 [&](const LinearInStateDiffusion& s) {
                   for (int i = 0; i < n_; ++i)
                     for (int l = 0; l < d_; ++l) {
                       double acc = 0.0;
                       for (int k = 0; k < n_; ++k) acc += s.A[l](i, k) * x[k];
                       out[i * d_ + l] = acc;
                     }
                 },
                 [&](const PolynomialDiffusion& s) {
                   for (int e = 0; e < n_ * d_; ++e) out[e] = s.entries[e].eval(x);
                 }},
             diffusion_);
}

Vector SdeSystem::drift(const Vector& own, const Vector& partner) const {
  const Vector& arg = input_ == DriftInput::Partner ? partner : own;
  Vector out(n_);
  drift_into({arg.data(), static_cast<std::size_t>(arg.size())}, {out.data(), static_cast<std::size_t>(n_)});
  return out;
}

Matrix SdeSystem::diffusion(const Vector& x) const {
  std::vector<double> buf(static_cast<std::size_t>(n_) * d_);
  diffusion_into({x.data(), static_cast<std::size_t>(x.size())}, buf);
  Matrix out(n_, d_);
  for (int i = 0; i < n_; ++i)
    for (int l = 0; l < d_; ++l) out(i, l) = buf[i * d_ + l];
  return out;
}

Matrix SdeSystem::drift_jacobian(const Vector& arg) const {
  return std::visit(overloaded{[](const LinearDrift& s) -> Matrix { return s.A; },
                               [](const AffineDrift& s) -> Matrix { return s.A; },
                               [&](const PolynomialDrift& s) -> Matrix {
                                 Matrix J(n_, n_);
                                 std::span<const double> xs{arg.data(), static_cast<std::size_t>(n_)};
                                 for (int i = 0; i < n_; ++i)
                                   for (int k = 0; k < n_; ++k) J(i, k) = s.components[i].partial(xs, k);
                                 return J;
                               }},
                    drift_);
}

std::vector<Matrix> SdeSystem::diffusion_jacobians(const Vector& x) const {
  std::vector<Matrix> out(d_, Matrix::Zero(n_, n_));
  std::visit(overloaded{[](const ConstantDiffusion&) {},
                        [&](const LinearInStateDiffusion& s) {
                          for (int l = 0; l < d_; ++l) out[l] = s.A[l];
                        },
                        [&](const PolynomialDiffusion& s) {
                          std::span<const double> xs{x.data(), static_cast<std::size_t>(n_)};
                          for (int l = 0; l < d_; ++l)
                            for (int i = 0; i < n_; ++i)
                              for (int k = 0; k < n_; ++k)
                                out[l](i, k) = s.entries[i * d_ + l].partial(xs, k);
                        }},
             diffusion_);
  return out;
}

Matrix SdeSystem::drift_hessian(const Vector& arg, int component) const {
  Matrix H = Matrix::Zero(n_, n_);
  if (const auto* s = std::get_if<PolynomialDrift>(&drift_)) {
    std::span<const double> xs{arg.data(), static_cast<std::size_t>(n_)};
    for (int a = 0; a < n_; ++a)
      for (int b = 0; b < n_; ++b) H(a, b) = s->components[component].second_partial(xs, a, b);
  }
  return H;
}

bool SdeSystem::is_linear_constant() const noexcept {
  const bool linear_drift =
      std::holds_alternative<LinearDrift>(drift_) || std::holds_alternative<AffineDrift>(drift_);
  return linear_drift && std::holds_alternative<ConstantDiffusion>(diffusion_);
}

namespace {

bool spec_equal(const DriftSpec& a, const DriftSpec& b) {
  if (a.index() != b.index()) return false;
  if (const auto* s = std::get_if<LinearDrift>(&a)) return s->A == std::get<LinearDrift>(b).A;
  if (const auto* s = std::get_if<AffineDrift>(&a)) {
    const auto& t = std::get<AffineDrift>(b);
    return s->A == t.A && s->a == t.a;
  }
  return std::get<PolynomialDrift>(a).components == std::get<PolynomialDrift>(b).components;
}

bool spec_equal(const DiffusionSpec& a, const DiffusionSpec& b) {
  if (a.index() != b.index()) return false;
  if (const auto* s = std::get_if<ConstantDiffusion>(&a)) return s->B == std::get<ConstantDiffusion>(b).B;
  if (const auto* s = std::get_if<LinearInStateDiffusion>(&a)) {
    const auto& t = std::get<LinearInStateDiffusion>(b);
    if (s->A.size() != t.A.size()) return false;
    for (std::size_t l = 0; l < s->A.size(); ++l)
      if (s->A[l] != t.A[l]) return false;
    return true;
  }
  const auto& s = std::get<PolynomialDiffusion>(a);
  const auto& t = std::get<PolynomialDiffusion>(b);
  return s.noise_dim == t.noise_dim && s.entries == t.entries;
}

}  // namespace

bool SdeSystem::operator==(const SdeSystem& other) const {
  return n_ == other.n_ && d_ == other.d_ && input_ == other.input_ &&
         spec_equal(drift_, other.drift_) && spec_equal(diffusion_, other.diffusion_);
}

// ---------------------------------------------------------------------------
// Simulation

Vector PathPair::x_vec(int k) const {
  auto s = x_at(k);
  return Eigen::Map<const Vector>(s.data(), dim);
}

Vector PathPair::y_vec(int k) const {
  auto s = y_at(k);
  return Eigen::Map<const Vector>(s.data(), dim);
}

namespace {

void check_pair_dims(const SdeSystem& sx, const SdeSystem& sy, const Vector& x0, const Vector& y0) {
  if (sx.dim() < 1 || sy.dim() < 1)
    throw Error(ErrorCode::InvalidArgument, "systems must be initialised");
  if (sx.dim() != sy.dim())
    throw Error(ErrorCode::DimensionMismatch, "both systems must live in the same R^n");
  if (sx.noise_dim() != sy.noise_dim())
    throw Error(ErrorCode::DimensionMismatch, "both systems must share the noise dimension d");
  if (x0.size() != sx.dim() || y0.size() != sy.dim())
    throw Error(ErrorCode::DimensionMismatch, "initial state dimension mismatch");
}

double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (double e : v) s += e * e;
  return std::sqrt(s);
}

bool out_of_bounds(double norm, double bound) { return !std::isfinite(norm) || norm > bound; }

// One Euler-Maruyama step of one system; mirrors the kernel operation order.
void em_step(const SdeSystem& sys, double dt, std::span<const double> own,
             std::span<const double> partner, std::span<const double> dw,
             std::span<double> drift_buf, std::span<double> diff_buf, std::span<double> out) {
  const int n = sys.dim();
  const int d = sys.noise_dim();
  sys.drift_into(sys.drift_input() == DriftInput::Partner ? partner : own, drift_buf);
  sys.diffusion_into(own, diff_buf);
  for (int i = 0; i < n; ++i) {
    double noise = 0.0;
    for (int l = 0; l < d; ++l) noise += diff_buf[i * d + l] * dw[l];
    double next = own[i] + drift_buf[i] * dt;
    out[i] = next + noise;
  }
}

}  // namespace

PathPair simulate_pair(const SdeSystem& sys_x, const SdeSystem& sys_y, const Vector& x0,
                       const Vector& y0, const BrownianPath& path, double blowup_bound) {
  check_pair_dims(sys_x, sys_y, x0, y0);
  if (path.noise_dim != sys_x.noise_dim())
    throw Error(ErrorCode::DimensionMismatch, "Brownian path channel count differs from d");
  if (!path.has_increments()) throw Error(ErrorCode::InvalidArgument, "Brownian path has no increments");
  const int n = sys_x.dim();
  const int d = sys_x.noise_dim();
  const int steps = path.grid.n_steps();

  PathPair pair;
  pair.grid = path.grid;
  pair.dim = n;
  pair.path = path;
  pair.x.resize(static_cast<std::size_t>(steps + 1) * n);
  pair.y.resize(static_cast<std::size_t>(steps + 1) * n);
  std::copy(x0.data(), x0.data() + n, pair.x.begin());
  std::copy(y0.data(), y0.data() + n, pair.y.begin());

  std::vector<double> drift_buf(n), diff_buf(static_cast<std::size_t>(n) * d);
  const double dt = path.grid.dt();
  for (int k = 0; k < steps; ++k) {
    std::span<const double> xk{pair.x.data() + static_cast<std::size_t>(k) * n, static_cast<std::size_t>(n)};
    std::span<const double> yk{pair.y.data() + static_cast<std::size_t>(k) * n, static_cast<std::size_t>(n)};
    std::span<double> xn{pair.x.data() + static_cast<std::size_t>(k + 1) * n, static_cast<std::size_t>(n)};
    std::span<double> yn{pair.y.data() + static_cast<std::size_t>(k + 1) * n, static_cast<std::size_t>(n)};
    auto dw = path.increment(k);
    em_step(sys_x, dt, xk, yk, dw, drift_buf, diff_buf, xn);
    em_step(sys_y, dt, yk, xk, dw, drift_buf, diff_buf, yn);
    const double nx = norm_of(xn);
    const double ny = norm_of(yn);
    if (out_of_bounds(nx, blowup_bound) || out_of_bounds(ny, blowup_bound))
      throw DivergedTrajectory(static_cast<std::int64_t>(path.path_index), k + 1,
                               std::isfinite(nx) && std::isfinite(ny) ? std::max(nx, ny)
                                                                      : std::numeric_limits<double>::infinity());
  }
  return pair;
}

namespace {

struct RowMajorCoeffs {
  std::vector<double> A, offset, B;
  kernels::LinearStepCoeffs view;

  explicit RowMajorCoeffs(const SdeSystem& sys) {
    const int n = sys.dim();
    const int d = sys.noise_dim();
    Matrix a_mat;
    if (const auto* s = std::get_if<LinearDrift>(&sys.drift_spec())) {
      a_mat = s->A;
    } else {
      const auto& af = std::get<AffineDrift>(sys.drift_spec());
      a_mat = af.A;
      offset.assign(af.a.data(), af.a.data() + n);
    }
    const Matrix& b_mat = std::get<ConstantDiffusion>(sys.diffusion_spec()).B;
    A.resize(static_cast<std::size_t>(n) * n);
    B.resize(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < n; ++k) A[i * n + k] = a_mat(i, k);
      for (int l = 0; l < d; ++l) B[i * d + l] = b_mat(i, l);
    }
    view.n = n;
    view.d = d;
    view.A = A.data();
    view.offset = offset.empty() ? nullptr : offset.data();
    view.B = B.data();
    view.partner = sys.drift_input() == DriftInput::Partner;
  }
};

struct Failure {
  std::int64_t path = -1;
  int step = 0;
  double norm = 0.0;
};

// Simulates paths [first, first + count) through the batched kernel.
std::optional<Failure> simulate_block_kernel(const EnsembleConfig& cfg, const RowMajorCoeffs& cx,
                                             const RowMajorCoeffs& cy, int first, int count,
                                             std::vector<PathPair>& pairs) {
  const int n = cfg.sys_x.dim();
  const int d = cfg.sys_x.noise_dim();
  const int steps = cfg.grid.n_steps();
  const std::size_t lanes = static_cast<std::size_t>(count);
  for (int j = 0; j < count; ++j) {
    PathPair& pair = pairs[first + j];
    pair.grid = cfg.grid;
    pair.dim = n;
    pair.path = generate_brownian_path(cfg.grid, d, cfg.master_seed, static_cast<std::uint64_t>(first + j));
    pair.x.assign(static_cast<std::size_t>(steps + 1) * n, 0.0);
    pair.y.assign(static_cast<std::size_t>(steps + 1) * n, 0.0);
    std::copy(cfg.x0.data(), cfg.x0.data() + n, pair.x.begin());
    std::copy(cfg.y0.data(), cfg.y0.data() + n, pair.y.begin());
  }
  std::vector<double> xs(n * lanes), ys(n * lanes), dw(d * lanes), scratch(2 * n * lanes);
  for (int i = 0; i < n; ++i)
    for (std::size_t j = 0; j < lanes; ++j) {
      xs[i * lanes + j] = cfg.x0[i];
      ys[i * lanes + j] = cfg.y0[i];
    }
  std::vector<int> failed_step(count, 0);
  std::vector<double> failed_norm(count, 0.0);
  const double dt = cfg.grid.dt();
  for (int k = 0; k < steps; ++k) {
    for (std::size_t j = 0; j < lanes; ++j) {
      auto inc = pairs[first + j].path.increment(k);
      for (int l = 0; l < d; ++l) dw[l * lanes + j] = inc[l];
    }
    kernels::em_step_linear(cx.view, cy.view, dt, lanes, dw.data(), xs.data(), ys.data(), scratch.data());
    for (std::size_t j = 0; j < lanes; ++j) {
      PathPair& pair = pairs[first + j];
      double* xn = pair.x.data() + static_cast<std::size_t>(k + 1) * n;
      double* yn = pair.y.data() + static_cast<std::size_t>(k + 1) * n;
      double sx = 0.0, sy = 0.0;
      for (int i = 0; i < n; ++i) {
        xn[i] = xs[i * lanes + j];
        yn[i] = ys[i * lanes + j];
        sx += xn[i] * xn[i];
        sy += yn[i] * yn[i];
      }
      if (failed_step[j] == 0) {
        const double nx = std::sqrt(sx), ny = std::sqrt(sy);
        if (out_of_bounds(nx, cfg.blowup_bound) || out_of_bounds(ny, cfg.blowup_bound)) {
          failed_step[j] = k + 1;
          failed_norm[j] = std::isfinite(nx) && std::isfinite(ny)
                               ? std::max(nx, ny)
                               : std::numeric_limits<double>::infinity();
        }
      }
    }
  }
  for (int j = 0; j < count; ++j)
    if (failed_step[j] != 0) return Failure{first + j, failed_step[j], failed_norm[j]};
  return std::nullopt;
}

std::optional<Failure> simulate_block_generic(const EnsembleConfig& cfg, int first, int count,
                                              std::vector<PathPair>& pairs) {
  for (int j = 0; j < count; ++j) {
    const int i = first + j;
    try {
      auto path = generate_brownian_path(cfg.grid, cfg.sys_x.noise_dim(), cfg.master_seed,
                                         static_cast<std::uint64_t>(i));
      pairs[i] = simulate_pair(cfg.sys_x, cfg.sys_y, cfg.x0, cfg.y0, path, cfg.blowup_bound);
    } catch (const DivergedTrajectory& e) {
      return Failure{e.path_index(), e.step(), 0.0};
    }
  }
  return std::nullopt;
}

}  // namespace

Ensemble simulate_ensemble(const EnsembleConfig& config) {
  if (config.n_paths < 1) throw Error(ErrorCode::InvalidArgument, "ensemble needs n_paths >= 1");
  check_pair_dims(config.sys_x, config.sys_y, config.x0, config.y0);

  Ensemble ens;
  ens.config = config;
  ens.pairs.resize(config.n_paths);

  const bool batched = config.sys_x.is_linear_constant() && config.sys_y.is_linear_constant();
  std::optional<RowMajorCoeffs> cx, cy;
  if (batched) {
    cx.emplace(config.sys_x);
    cy.emplace(config.sys_y);
  }
  const int block = static_cast<int>(kernels::preferred_lanes());
  const int n_blocks = (config.n_paths + block - 1) / block;

  std::vector<std::optional<Failure>> failures(n_blocks);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int b = next.fetch_add(1); b < n_blocks; b = next.fetch_add(1)) {
      const int first = b * block;
      const int count = std::min(block, config.n_paths - first);
      failures[b] = batched ? simulate_block_kernel(config, *cx, *cy, first, count, ens.pairs)
                            : simulate_block_generic(config, first, count, ens.pairs);
    }
  };
  const int workers = std::clamp(config.workers, 1, std::max(1, n_blocks));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  // Blocks are ordered by path index, so the first failure is the lowest index.
  for (const auto& f : failures)
    if (f) throw DivergedTrajectory(f->path, f->step, f->norm);
  return ens;
}

// ---------------------------------------------------------------------------
// Oracle

GaussianMoments ou_moments_oracle(const Matrix& A, const Matrix& B, const Vector& x0, double t) {
  if (A.rows() != A.cols() || B.rows() != A.rows() || x0.size() != A.rows())
    throw Error(ErrorCode::DimensionMismatch, "oracle dimensions differ");
  if (t < 0.0) throw Error(ErrorCode::InvalidArgument, "oracle time must be >= 0");
  const int n = static_cast<int>(A.rows());
  GaussianMoments out;
  out.mean = (A * t).exp() * x0;
  out.cov = Matrix::Zero(n, n);
  if (t == 0.0) return out;

  constexpr int kIntervals = 100000;
  const double h = t / kIntervals;
  const Matrix step = (A * h).exp();
  const Matrix BBt = B * B.transpose();
  Matrix E = Matrix::Identity(n, n);
  Matrix acc = BBt;  // s = 0 endpoint
  for (int k = 1; k <= kIntervals; ++k) {
    E = E * step;
    const double w = (k == kIntervals) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    acc += w * (E * BBt * E.transpose());
  }
  out.cov = acc * (h / 3.0);
  return out;
}

// ---------------------------------------------------------------------------
// CSV

void write_ensemble_csv(std::ostream& out, const Ensemble& ensemble) {
  const int n = ensemble.dim();
  out << "t,path";
  for (int i = 1; i <= n; ++i) out << ",x" << i;
  for (int i = 1; i <= n; ++i) out << ",y" << i;
  out << '\n';
  char buf[64];
  for (int p = 0; p < ensemble.n_paths(); ++p) {
    const PathPair& pair = ensemble.pairs[p];
    for (int k = 0; k < pair.grid.n_points(); ++k) {
      std::snprintf(buf, sizeof buf, "%.17g", pair.grid.t(k));
      out << buf << ',' << p;
      for (double v : pair.x_at(k)) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        out << buf;
      }
      for (double v : pair.y_at(k)) {
        std::snprintf(buf, sizeof buf, ",%.17g", v);
        out << buf;
      }
      out << '\n';
    }
  }
}

Ensemble read_ensemble_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "ensemble CSV is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 4 || header[0] != "t" || header[1] != "path" || (header.size() - 2) % 2 != 0)
    throw Error(ErrorCode::ParseError, "ensemble CSV header must be t,path,x1..xn,y1..yn");
  const int n = static_cast<int>((header.size() - 2) / 2);
  for (int i = 0; i < n; ++i)
    if (header[2 + i] != "x" + std::to_string(i + 1) || header[2 + n + i] != "y" + std::to_string(i + 1))
      throw Error(ErrorCode::ParseError, "ensemble CSV header must be t,path,x1..xn,y1..yn");

  std::map<long, std::vector<std::vector<double>>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorCode::ParseError, "bad number on CSV line " + std::to_string(line_no));
      }
    }
    if (static_cast<int>(vals.size()) != 2 + 2 * n)
      throw Error(ErrorCode::ParseError, "wrong column count on CSV line " + std::to_string(line_no));
    rows[static_cast<long>(vals[1])].push_back(std::move(vals));
  }
  if (rows.empty()) throw Error(ErrorCode::ParseError, "ensemble CSV has no rows");
  const auto& first = rows.begin()->second;
  if (first.size() < 2) throw Error(ErrorCode::ParseError, "each path needs at least two grid points");
  const TimeGrid grid(first.back()[0], static_cast<int>(first.size()) - 1);

  Ensemble ens;
  ens.config.grid = grid;
  ens.config.n_paths = static_cast<int>(rows.size());
  ens.config.x0 = Vector(n);
  ens.config.y0 = Vector(n);
  for (int i = 0; i < n; ++i) {
    ens.config.x0[i] = first.front()[2 + i];
    ens.config.y0[i] = first.front()[2 + n + i];
  }
  for (const auto& [index, path_rows] : rows) {
    if (path_rows.size() != first.size())
      throw Error(ErrorCode::ParseError, "paths in the CSV have different lengths");
    PathPair pair;
    pair.grid = grid;
    pair.dim = n;
    pair.path.grid = grid;
    pair.path.path_index = static_cast<std::uint64_t>(index);
    for (std::size_t k = 0; k < path_rows.size(); ++k) {
      if (!grid.index_of(path_rows[k][0]) || *grid.index_of(path_rows[k][0]) != static_cast<int>(k))
        throw Error(ErrorCode::ParseError, "CSV times are not a uniform grid starting at 0");
      for (int i = 0; i < n; ++i) pair.x.push_back(path_rows[k][2 + i]);
      for (int i = 0; i < n; ++i) pair.y.push_back(path_rows[k][2 + n + i]);
    }
    ens.pairs.push_back(std::move(pair));
  }
  return ens;
}

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::DivergedTrajectory: return "DivergedTrajectory";
    case ErrorCode::SingularMap: return "SingularMap";
    case ErrorCode::GridMiss: return "GridMiss";
    case ErrorCode::DegenerateSamples: return "DegenerateSamples";
    case ErrorCode::HorizonTooShort: return "HorizonTooShort";
    case ErrorCode::AllRestartsNonInvertible: return "AllRestartsNonInvertible";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::IllConditionedRegression: return "IllConditionedRegression";
    case ErrorCode::SingularDenominator: return "SingularDenominator";
    case ErrorCode::SingularDiffusion: return "SingularDiffusion";
    case ErrorCode::NotAFixedPoint: return "NotAFixedPoint";
    case ErrorCode::UnsupportedDichotomy: return "UnsupportedDichotomy";
    case ErrorCode::ContractionViolated: return "ContractionViolated";
    case ErrorCode::AllPathsExitImmediately: return "AllPathsExitImmediately";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
  }
  return "Unknown";
}

}  // namespace simil
