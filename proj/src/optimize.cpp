#include "simil/optimize.hpp"

#include "simil/errors.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace simil {

namespace {

double dot(const Vector& a, const Vector& b) { return a.dot(b); }

void require_increments(const Ensemble& ensemble) {
  if (ensemble.n_paths() == 0) throw Error(ErrorCode::InvalidArgument, "ensemble is empty");
  for (const auto& pair : ensemble.pairs)
    if (!pair.path.has_increments())
      throw Error(ErrorCode::InvalidArgument, "ensemble has no Brownian increments (loaded from CSV?)");
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// Cost specification

Vector map_direction(const MappingK& K, const MappingK& dir, const Vector& x) {
  Matrix Kd;
  Vector bd;
  if (dir.affine_parts(Kd, bd)) return Kd * x + bd;
  const double h = 1e-6;
  return (K.perturbed(dir, h).apply(x) - K.perturbed(dir, -h).apply(x)) / (2.0 * h);
}

CostSpec CostSpec::similarity(double T) {
  if (!(T > 0.0)) throw Error(ErrorCode::InvalidArgument, "cost horizon must be positive");
  CostSpec c;
  c.L = [T](const Vector& x, const Vector& y, const MappingK& K) {
    return (K.apply(x) - y).squaredNorm() / T;
  };
  c.L_X = [T](const Vector& x, const Vector& y, const MappingK& K) -> Vector {
    return (2.0 / T) * K.jacobian(x).transpose() * (K.apply(x) - y);
  };
  c.L_Y = [T](const Vector& x, const Vector& y, const MappingK& K) -> Vector {
    return (-2.0 / T) * (K.apply(x) - y);
  };
  c.L_K = [T](const Vector& x, const Vector& y, const MappingK& K, const MappingK& dir) {
    return (2.0 / T) * dot(K.apply(x) - y, map_direction(K, dir, x));
  };
  c.h = [](const Vector& x, const Vector& y, const MappingK& K) { return (K.apply(x) - y).norm(); };
  // |psi| is not differentiable at psi = 0; the zero subgradient is used there.
  c.h_X = [](const Vector& x, const Vector& y, const MappingK& K) -> Vector {
    const Vector psi = K.apply(x) - y;
    const double n = psi.norm();
    if (n == 0.0) return Vector::Zero(x.size());
    return K.jacobian(x).transpose() * psi / n;
  };
  c.h_Y = [](const Vector& x, const Vector& y, const MappingK& K) -> Vector {
    const Vector psi = K.apply(x) - y;
    const double n = psi.norm();
    if (n == 0.0) return Vector::Zero(y.size());
    return -psi / n;
  };
  c.h_K = [](const Vector& x, const Vector& y, const MappingK& K, const MappingK& dir) {
    const Vector psi = K.apply(x) - y;
    const double n = psi.norm();
    return n == 0.0 ? 0.0 : dot(psi, map_direction(K, dir, x)) / n;
  };
  return c;
}

CostSpec CostSpec::zero() {
  CostSpec c;
  c.L = c.h = [](const Vector&, const Vector&, const MappingK&) { return 0.0; };
  c.L_X = c.h_X = [](const Vector& x, const Vector&, const MappingK&) -> Vector { return Vector::Zero(x.size()); };
  c.L_Y = c.h_Y = [](const Vector&, const Vector& y, const MappingK&) -> Vector { return Vector::Zero(y.size()); };
  c.L_K = c.h_K = [](const Vector&, const Vector&, const MappingK&, const MappingK&) { return 0.0; };
  return c;
}

std::vector<MappingK> random_directions(const MappingK& K, int count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  const std::size_t m = K.parameters().size();
  std::vector<MappingK> out;
  out.reserve(count);
  for (int c = 0; c < count; ++c) {
    std::vector<double> d(m);
    double norm = 0.0;
    while (norm < 1e-12) {
      for (auto& v : d) v = normal(rng);
      norm = std::sqrt(std::inner_product(d.begin(), d.end(), d.begin(), 0.0));
    }
    for (auto& v : d) v /= norm;
    out.push_back(K.with_parameters(d));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nelder-Mead

namespace {

struct NmRun {
  std::vector<double> best;
  double f_best = 0.0;
  bool converged = false;
  double diameter = 0.0;
};

using Point = std::vector<double>;

Point affine_comb(const Point& a, const Point& b, double t) {  // a + t (b - a)
  Point out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + t * (b[i] - a[i]);
  return out;
}

double distance(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

template <class F>
NmRun nelder_mead(F&& f, const Point& start, double step, int max_iter, double tol, int& iteration,
                  std::vector<std::pair<int, double>>& trace, double& global_best) {
  const std::size_t m = start.size();
  std::vector<Point> v(m + 1, start);
  std::vector<double> fv(m + 1);
  for (std::size_t i = 0; i < m; ++i) v[i + 1][i] += step;
  for (std::size_t i = 0; i <= m; ++i) fv[i] = f(v[i]);

  std::vector<std::size_t> order(m + 1);
  NmRun run;
  for (int it = 0;; ++it) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    std::vector<Point> sv(m + 1);
    std::vector<double> sf(m + 1);
    for (std::size_t i = 0; i <= m; ++i) {
      sv[i] = v[order[i]];
      sf[i] = fv[order[i]];
    }
    v = std::move(sv);
    fv = std::move(sf);

    global_best = std::min(global_best, fv[0]);
    trace.emplace_back(iteration++, global_best);

    double diam = 0.0;
    for (std::size_t i = 1; i <= m; ++i) diam = std::max(diam, distance(v[i], v[0]));
    run.diameter = diam;
    if (diam < tol) {
      run.converged = true;
      break;
    }
    if (it >= max_iter) break;

    Point c(m, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) c[j] += v[i][j] / static_cast<double>(m);

    const Point& worst = v[m];
    Point xr = affine_comb(c, worst, -1.0);
    const double fr = f(xr);
    if (fr < fv[0]) {
      Point xe = affine_comb(c, worst, -2.0);
      const double fe = f(xe);
      if (fe < fr) {
        v[m] = std::move(xe);
        fv[m] = fe;
      } else {
        v[m] = std::move(xr);
        fv[m] = fr;
      }
      continue;
    }
    if (fr < fv[m - 1]) {
      v[m] = std::move(xr);
      fv[m] = fr;
      continue;
    }
    bool accepted = false;
    if (fr < fv[m]) {
      Point xc = affine_comb(c, xr, 0.5);
      const double fc = f(xc);
      if (fc <= fr) {
        v[m] = std::move(xc);
        fv[m] = fc;
        accepted = true;
      }
    } else {
      Point xc = affine_comb(c, worst, 0.5);
      const double fc = f(xc);
      if (fc < fv[m]) {
        v[m] = std::move(xc);
        fv[m] = fc;
        accepted = true;
      }
    }
    if (!accepted) {
      for (std::size_t i = 1; i <= m; ++i) {
        v[i] = affine_comb(v[0], v[i], 0.5);
        fv[i] = f(v[i]);
      }
    }
  }
  run.best = v[0];
  run.f_best = fv[0];
  return run;
}

}  // namespace

OptResult optimize_K(const MappingK& family, const Ensemble& ensemble, const OptOptions& options) {
  if (ensemble.n_paths() == 0) throw Error(ErrorCode::InvalidArgument, "ensemble is empty");
  if (family.dim() != ensemble.dim())
    throw Error(ErrorCode::DimensionMismatch, "map dimension differs from the systems");
  const Point start = family.parameters();
  if (start.size() > 64) throw Error(ErrorCode::InvalidArgument, "map family has more than 64 parameters");
  if (options.restarts < 1 || options.max_iter < 1 || !(options.step > 0.0) || !(options.tol > 0.0))
    throw Error(ErrorCode::InvalidArgument, "optimizer needs restarts >= 1, max_iter >= 1, step > 0, tol > 0");

  OptResult result;
  auto cost = [&](const MappingK& K) {
    return options.terminal_objective ? terminal_cost_Jtilde(ensemble, K) : cost_J(ensemble, K);
  };
  auto objective = [&](const Point& params) {
    ++result.evaluations;
    MappingK K;
    try {
      K = family.with_parameters(params);
    } catch (const Error&) {
      return 2.0 * kInvertibilityPenalty;
    }
    double value = cost(K).value;
    if (!std::isfinite(value)) value = kInvertibilityPenalty;
    return K.is_admissible() ? value : value + kInvertibilityPenalty;
  };

  result.J_initial = cost(family);
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  int iteration = 0;
  double global_best = std::numeric_limits<double>::infinity();
  NmRun best;
  best.f_best = std::numeric_limits<double>::infinity();
  for (int r = 0; r < options.restarts; ++r) {
    Point x0 = r == 0 ? start : best.best;
    if (r > 0)
      for (auto& p : x0) p += options.step * normal(rng);
    NmRun run = nelder_mead(objective, x0, options.step, options.max_iter, options.tol, iteration, result.trace,
                            global_best);
    if (run.f_best < best.f_best) best = std::move(run);
  }

  result.best_K = family.with_parameters(best.best);
  if (!result.best_K.is_admissible())
    throw Error(ErrorCode::AllRestartsNonInvertible, "every restart ended at a non-invertible map");
  result.J_best = cost(result.best_K);
  result.converged = best.converged;
  result.final_diameter = best.diameter;
  result.homeo = check_homeomorphism(result.best_K, ensemble);
  return result;
}

DerivativeEstimate directional_derivative(const Ensemble& ensemble, const MappingK& K, const MappingK& direction,
                                          double eps) {
  if (!(eps > 0.0)) throw Error(ErrorCode::InvalidArgument, "finite-difference step must be positive");
  const MappingK plus = K.perturbed(direction, eps);
  const MappingK minus = K.perturbed(direction, -eps);
  if (!plus.is_admissible() || !minus.is_admissible())
    throw Error(ErrorCode::StepTooLarge, "K +- eps * direction is not invertible");
  const auto jp = per_path_cost_J(ensemble, plus);
  const auto jm = per_path_cost_J(ensemble, minus);
  const auto j0 = per_path_cost_J(ensemble, K);
  std::vector<double> d(jp.size()), c(jp.size());
  for (std::size_t i = 0; i < jp.size(); ++i) {
    d[i] = (jp[i] - jm[i]) / (2.0 * eps);
    c[i] = (jp[i] - 2.0 * j0[i] + jm[i]) / (eps * eps);
  }
  const CostEstimate est = summarize(d, ensemble.grid().dt(), CostKind::TimeAverageJ);
  return {est.value, est.std_error, mean_of(c)};
}

// ---------------------------------------------------------------------------
// Variational equations

Vector VariationalSolution::x_hat_at(int path, int k) const {
  return Eigen::Map<const Vector>(x_hat[path].data() + static_cast<std::size_t>(k) * dim, dim);
}
Vector VariationalSolution::y_hat_at(int path, int k) const {
  return Eigen::Map<const Vector>(y_hat[path].data() + static_cast<std::size_t>(k) * dim, dim);
}

VariationalSolution solve_variational_equations(const Ensemble& ensemble, const VariationalOptions& options) {
  require_increments(ensemble);
  const int n = ensemble.dim();
  auto or_zero = [n](const Vector& v, const char* what) -> Vector {
    if (v.size() == 0) return Vector::Zero(n);
    if (v.size() != n) throw Error(ErrorCode::DimensionMismatch, std::string(what) + " has the wrong dimension");
    return v;
  };
  const Vector xh0 = or_zero(options.x_hat0, "x_hat0");
  const Vector yh0 = or_zero(options.y_hat0, "y_hat0");
  const Vector phi_x = or_zero(options.forcing_x, "forcing_x");
  const Vector phi_y = or_zero(options.forcing_y, "forcing_y");

  const SdeSystem& sx = ensemble.config.sys_x;
  const SdeSystem& sy = ensemble.config.sys_y;
  const TimeGrid& grid = ensemble.grid();
  const double dt = grid.dt();
  const int d = sx.noise_dim();
  const double bound = ensemble.config.blowup_bound;

  VariationalSolution sol;
  sol.dim = n;
  sol.n_points = grid.n_points();
  sol.x_hat.resize(ensemble.n_paths());
  sol.y_hat.resize(ensemble.n_paths());

  for (int p = 0; p < ensemble.n_paths(); ++p) {
    const PathPair& pair = ensemble.pairs[p];
    auto& xs = sol.x_hat[p];
    auto& ys = sol.y_hat[p];
    xs.resize(static_cast<std::size_t>(sol.n_points) * n);
    ys.resize(xs.size());
    Vector xh = xh0, yh = yh0;
    std::copy(xh.data(), xh.data() + n, xs.begin());
    std::copy(yh.data(), yh.data() + n, ys.begin());
    for (int k = 0; k < grid.n_steps(); ++k) {
      const Vector x = pair.x_vec(k);
      const Vector y = pair.y_vec(k);
      const auto dw = pair.path.increment(k);
      const bool x_own = sx.drift_input() == DriftInput::Own;
      const bool y_own = sy.drift_input() == DriftInput::Own;
      Vector xn = xh + (sx.drift_jacobian(x_own ? x : y) * (x_own ? xh : yh) + phi_x) * dt;
      Vector yn = yh + (sy.drift_jacobian(y_own ? y : x) * (y_own ? yh : xh) + phi_y) * dt;
      const auto jx = sx.diffusion_jacobians(x);
      const auto jy = sy.diffusion_jacobians(y);
      for (int l = 0; l < d; ++l) {
        xn += jx[l] * xh * dw[l];
        yn += jy[l] * yh * dw[l];
      }
      const double norm = std::max(xn.norm(), yn.norm());
      if (!std::isfinite(norm) || norm > bound)
        throw DivergedTrajectory(static_cast<std::int64_t>(pair.path.path_index), k + 1, norm);
      xh = std::move(xn);
      yh = std::move(yn);
      std::copy(xh.data(), xh.data() + n, xs.begin() + static_cast<std::ptrdiff_t>(k + 1) * n);
      std::copy(yh.data(), yh.data() + n, ys.begin() + static_cast<std::ptrdiff_t>(k + 1) * n);
    }
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Adjoint BSDEs by least-squares Monte Carlo

Vector AdjointSolution::p_at(int k, int path) const {
  return Eigen::Map<const Vector>(p.data() + (static_cast<std::size_t>(k) * n_paths + path) * dim, dim);
}
Vector AdjointSolution::r_at(int k, int path) const {
  return Eigen::Map<const Vector>(r.data() + (static_cast<std::size_t>(k) * n_paths + path) * dim, dim);
}
Matrix AdjointSolution::q_at(int k, int path) const {
  const std::size_t m = static_cast<std::size_t>(dim) * noise_dim;
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      q.data() + (static_cast<std::size_t>(k) * n_paths + path) * m, dim, noise_dim);
}
Matrix AdjointSolution::s_at(int k, int path) const {
  const std::size_t m = static_cast<std::size_t>(dim) * noise_dim;
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      s.data() + (static_cast<std::size_t>(k) * n_paths + path) * m, dim, noise_dim);
}

namespace {

// Exponent tuples over `vars` variables with total degree in [1, degree].
std::vector<std::vector<int>> monomial_exponents(int vars, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> e(vars, 0);
  auto rec = [&](auto& self, int var, int left) -> void {
    if (var == vars) {
      if (left < degree) out.push_back(e);
      return;
    }
    for (int k = 0; k <= left; ++k) {
      e[var] = k;
      self(self, var + 1, left - k);
    }
    e[var] = 0;
  };
  rec(rec, 0, degree);
  return out;
}

// Least-squares fit of several targets on an intercept plus standardised
// polynomial features; returns fitted values with one row per path.
class Regressor {
 public:
  Regressor(const Matrix& features, bool drop_dependent) {
    const Eigen::Index N = features.rows();
    std::vector<Eigen::Index> kept;
    Matrix Z(N, features.cols());
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < features.cols(); ++j) {
      const double mean = features.col(j).mean();
      const double sd = std::sqrt((features.col(j).array() - mean).square().mean());
      if (!(sd > 1e-12 * (1.0 + std::abs(mean)))) continue;
      Z.col(c++) = (features.col(j).array() - mean) / sd;
    }
    Z.conservativeResize(N, c);
    if (drop_dependent && c > 0) {
      Eigen::ColPivHouseholderQR<Matrix> qr(Z);
      // Pivots below 1e-4 of the largest would leave a Gram condition near the 1e10 limit.
      qr.setThreshold(1e-4);
      const Eigen::Index rank = qr.rank();
      Matrix Zk(N, rank);
      for (Eigen::Index j = 0; j < rank; ++j) Zk.col(j) = Z.col(qr.colsPermutation().indices()[j]);
      Z = std::move(Zk);
      c = rank;
    }
    design_.resize(N, c + 1);
    design_.col(0).setOnes();
    design_.rightCols(c) = Z;
    // The features are centred, so the Gram matrix is blockdiag(1, correlation).
    double lo = 1.0, hi = 1.0;
    if (c > 0) {
      const Matrix corr = Z.transpose() * Z / static_cast<double>(N);
      Eigen::SelfAdjointEigenSolver<Matrix> es(corr, Eigen::EigenvaluesOnly);
      lo = std::min(lo, es.eigenvalues().minCoeff());
      hi = std::max(hi, es.eigenvalues().maxCoeff());
    }
    const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
    if (!(cond <= 1e10))
      throw Error(ErrorCode::IllConditionedRegression,
                  "regression basis Gram condition " + std::to_string(cond) + " exceeds 1e10");
    qr_.compute(design_);
  }

  Matrix fit(const Matrix& targets) const { return design_ * qr_.solve(targets); }

 private:
  Matrix design_;
  Eigen::HouseholderQR<Matrix> qr_;
};

}  // namespace

AdjointSolution solve_adjoint_lsmc(const Ensemble& ensemble, const MappingK& K, const CostSpec& cost,
                                   const AdjointOptions& options) {
  require_increments(ensemble);
  const int n = ensemble.dim();
  if (n > 3) throw Error(ErrorCode::InvalidArgument, "adjoint regression supports n <= 3");
  if (options.basis_degree < 0) throw Error(ErrorCode::InvalidArgument, "basis degree must be non-negative");
  if (K.dim() != n) throw Error(ErrorCode::DimensionMismatch, "map dimension differs from the systems");

  const SdeSystem& sx = ensemble.config.sys_x;
  const SdeSystem& sy = ensemble.config.sys_y;
  const TimeGrid& grid = ensemble.grid();
  const int N = ensemble.n_paths();
  const int d = sx.noise_dim();
  const int np = grid.n_points();
  const double dt = grid.dt();
  const bool x_own = sx.drift_input() == DriftInput::Own;
  const bool y_own = sy.drift_input() == DriftInput::Own;

  AdjointSolution sol;
  sol.dim = n;
  sol.noise_dim = d;
  sol.n_paths = N;
  sol.n_points = np;
  const std::size_t nd = static_cast<std::size_t>(n) * d;
  sol.p.assign(static_cast<std::size_t>(np) * N * n, 0.0);
  sol.r.assign(sol.p.size(), 0.0);
  sol.q.assign(static_cast<std::size_t>(np) * N * nd, 0.0);
  sol.s.assign(sol.q.size(), 0.0);

  auto at = [&](std::vector<double>& v, int k, int path, std::size_t width) {
    return v.data() + (static_cast<std::size_t>(k) * N + path) * width;
  };

  const int last = grid.n_steps();
  for (int i = 0; i < N; ++i) {
    const Vector x = ensemble.pairs[i].x_vec(last);
    const Vector y = ensemble.pairs[i].y_vec(last);
    const Vector hx = cost.h_X(x, y, K);
    const Vector hy = cost.h_Y(x, y, K);
    std::copy(hx.data(), hx.data() + n, at(sol.p, last, i, n));
    std::copy(hy.data(), hy.data() + n, at(sol.r, last, i, n));
    for (int c = 0; c < n; ++c) {
      sol.terminal_error = std::max(sol.terminal_error, std::abs(at(sol.p, last, i, n)[c] - hx[c]));
      sol.terminal_error = std::max(sol.terminal_error, std::abs(at(sol.r, last, i, n)[c] - hy[c]));
    }
  }

  const auto exps = monomial_exponents(2 * n, options.basis_degree);
  Matrix features(N, static_cast<Eigen::Index>(exps.size()));
  Matrix zq(N, 2 * static_cast<Eigen::Index>(nd));
  Matrix zp(N, 2 * n);

  for (int k = last - 1; k >= 0; --k) {
    for (int i = 0; i < N; ++i) {
      const auto xs = ensemble.pairs[i].x_at(k);
      const auto ys = ensemble.pairs[i].y_at(k);
      for (std::size_t j = 0; j < exps.size(); ++j) {
        double v = 1.0;
        for (int a = 0; a < n; ++a) v *= std::pow(xs[a], exps[j][a]) * std::pow(ys[a], exps[j][n + a]);
        features(i, static_cast<Eigen::Index>(j)) = v;
      }
    }
    const Regressor reg(features, options.drop_dependent);

    // q_k, s_k: projections of p_{k+1} dW / dt.
    for (int i = 0; i < N; ++i) {
      const auto dw = ensemble.pairs[i].path.increment(k);
      const double* pn = at(sol.p, k + 1, i, n);
      const double* rn = at(sol.r, k + 1, i, n);
      for (int a = 0; a < n; ++a)
        for (int l = 0; l < d; ++l) {
          zq(i, a * d + l) = pn[a] * dw[l] / dt;
          zq(i, static_cast<Eigen::Index>(nd) + a * d + l) = rn[a] * dw[l] / dt;
        }
    }
    const Matrix qs = reg.fit(zq);
    for (int i = 0; i < N; ++i) {
      for (std::size_t c = 0; c < nd; ++c) {
        at(sol.q, k, i, nd)[c] = qs(i, static_cast<Eigen::Index>(c));
        at(sol.s, k, i, nd)[c] = qs(i, static_cast<Eigen::Index>(nd + c));
      }
    }

    // p_k, r_k: projections of p_{k+1} + generator dt.
    for (int i = 0; i < N; ++i) {
      const Vector x = ensemble.pairs[i].x_vec(k);
      const Vector y = ensemble.pairs[i].y_vec(k);
      const Vector pn = Eigen::Map<const Vector>(at(sol.p, k + 1, i, n), n);
      const Vector rn = Eigen::Map<const Vector>(at(sol.r, k + 1, i, n), n);
      const Matrix qk = sol.q_at(k, i);
      const Matrix sk = sol.s_at(k, i);
      Vector gp = cost.L_X(x, y, K);
      Vector gr = cost.L_Y(x, y, K);
      const Matrix Jf = sx.drift_jacobian(x_own ? x : y);
      const Matrix Jg = sy.drift_jacobian(y_own ? y : x);
      (x_own ? gp : gr) += Jf.transpose() * pn;
      (y_own ? gr : gp) += Jg.transpose() * rn;
      const auto jx = sx.diffusion_jacobians(x);
      const auto jy = sy.diffusion_jacobians(y);
      for (int l = 0; l < d; ++l) {
        gp += jx[l].transpose() * qk.col(l);
        gr += jy[l].transpose() * sk.col(l);
      }
      zp.row(i).head(n) = (pn + gp * dt).transpose();
      zp.row(i).tail(n) = (rn + gr * dt).transpose();
    }
    const Matrix pr = reg.fit(zp);
    for (int i = 0; i < N; ++i)
      for (int a = 0; a < n; ++a) {
        at(sol.p, k, i, n)[a] = pr(i, a);
        at(sol.r, k, i, n)[a] = pr(i, n + a);
      }

    if (N > 1) {
      const Matrix res = zp - pr;
      for (Eigen::Index c = 0; c < res.cols(); ++c) {
        const double mean = res.col(c).mean();
        const double sd = std::sqrt((res.col(c).array() - mean).square().sum() / (N - 1));
        const double se = sd / std::sqrt(static_cast<double>(N));
        // Residuals at rounding level (constant targets) carry no signal.
        const double scale = zp.col(c).cwiseAbs().maxCoeff();
        if (se > 1e-12 * scale) sol.max_residual_ratio = std::max(sol.max_residual_ratio, std::abs(mean) / se);
      }
    }
  }
  return sol;
}

// ---------------------------------------------------------------------------
// Hamiltonian and the gradient condition

HamiltonianEval hamiltonian(const Vector& x, const Vector& y, const MappingK& K, const Vector& p, const Matrix& q,
                            const Vector& r, const Matrix& s, const SdeSystem& sys_x, const SdeSystem& sys_y,
                            const CostSpec& cost, const std::vector<MappingK>& probes) {
  const int n = sys_x.dim();
  const int d = sys_x.noise_dim();
  if (x.size() != n || y.size() != n || p.size() != n || r.size() != n || q.rows() != n || q.cols() != d ||
      s.rows() != n || s.cols() != d || sys_y.dim() != n || sys_y.noise_dim() != d)
    throw Error(ErrorCode::DimensionMismatch, "Hamiltonian arguments have inconsistent dimensions");
  HamiltonianEval out;
  out.H = p.dot(sys_x.drift(x, y)) + q.cwiseProduct(sys_x.diffusion(x)).sum() + r.dot(sys_y.drift(y, x)) +
          s.cwiseProduct(sys_y.diffusion(y)).sum() + cost.L(x, y, K);
  out.H_K.reserve(probes.size());
  for (const auto& dir : probes) out.H_K.push_back(cost.L_K(x, y, K, dir));
  return out;
}

MaxPrincipleReport maximum_principle_check(const Ensemble& ensemble, const OptResult& opt,
                                           const AdjointSolution& adjoint, const std::vector<MappingK>& probes,
                                           const CostSpec& cost) {
  if (!opt.converged) throw Error(ErrorCode::InvalidArgument, "maximum principle check needs a converged optimizer");
  if (ensemble.n_paths() == 0) throw Error(ErrorCode::InvalidArgument, "ensemble is empty");
  if (adjoint.n_paths != ensemble.n_paths() || adjoint.n_points != ensemble.grid().n_points())
    throw Error(ErrorCode::DimensionMismatch, "adjoint solution does not match the ensemble");

  const MappingK& K = opt.best_K;
  const TimeGrid& grid = ensemble.grid();
  const double T = grid.horizon();
  const double dt = grid.dt();
  const int np = grid.n_points();
  const double diam = std::max(opt.final_diameter, 1e-12);
  const SdeSystem& sx = ensemble.config.sys_x;
  const SdeSystem& sy = ensemble.config.sys_y;

  MaxPrincipleReport rep;
  rep.adjoint_terminal_error = adjoint.terminal_error;
  rep.pass = true;

  std::vector<double> integrand(np), curv(np), samples(ensemble.n_paths());
  std::vector<double> h_samples(ensemble.n_paths());
  for (int i = 0; i < ensemble.n_paths(); ++i) {
    for (int k = 0; k < np; ++k) {
      const Vector x = ensemble.pairs[i].x_vec(k);
      const Vector y = ensemble.pairs[i].y_vec(k);
      integrand[k] = hamiltonian(x, y, K, adjoint.p_at(k, i), adjoint.q_at(k, i), adjoint.r_at(k, i),
                                 adjoint.s_at(k, i), sx, sy, cost)
                         .H;
    }
    h_samples[i] = trapezoid_average(integrand, dt, T);
  }
  rep.mean_hamiltonian = mean_of(h_samples);

  for (const auto& dir : probes) {
    std::vector<double> curv_samples(ensemble.n_paths());
    for (int i = 0; i < ensemble.n_paths(); ++i) {
      for (int k = 0; k < np; ++k) {
        const Vector x = ensemble.pairs[i].x_vec(k);
        const Vector y = ensemble.pairs[i].y_vec(k);
        integrand[k] = cost.L_K(x, y, K, dir);
        curv[k] = (2.0 / T) * map_direction(K, dir, x).squaredNorm();
      }
      samples[i] = T * trapezoid_average(integrand, dt, T);
      curv_samples[i] = T * trapezoid_average(curv, dt, T);
    }
    const CostEstimate est = summarize(samples, dt, CostKind::TimeAverageJ);
    ProbeCheck pc;
    pc.estimate = est.value;
    pc.std_error = est.std_error;
    pc.floor = mean_of(curv_samples) * diam;
    pc.pass = pc.estimate >= -(3.0 * pc.std_error + pc.floor);
    rep.pass = rep.pass && pc.pass;
    rep.probes.push_back(pc);
  }
  return rep;
}

}  // namespace simil
