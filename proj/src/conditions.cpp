#include "simil/conditions.hpp"

#include "simil/errors.hpp"
#include "simil/functional.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace simil {

// ---------------------------------------------------------------------------
// Dissipation

DissipationReport dissipation_report(const Ensemble& ensemble, const MappingK& K, int max_samples) {
  if (ensemble.n_paths() == 0) throw Error(ErrorCode::InvalidArgument, "ensemble is empty");
  const SdeSystem& sx = ensemble.config.sys_x;
  const SdeSystem& sy = ensemble.config.sys_y;
  if (sx.dim() < 1 || sy.dim() < 1)
    throw Error(ErrorCode::InvalidArgument, "dissipation needs the ensemble's systems");
  const int n = ensemble.dim();
  const long points = ensemble.grid().n_points();
  const long total = points * ensemble.n_paths();
  const long stride = std::max<long>(1, (total + max_samples - 1) / std::max(1, max_samples));

  std::vector<double> lhs, z;
  for (long idx = 0; idx < total; idx += stride) {
    const PathPair& pair = ensemble.pairs[idx / points];
    const int k = static_cast<int>(idx % points);
    const Vector x = pair.x_vec(k), y = pair.y_vec(k);
    const Matrix J = K.jacobian(x);
    const Vector psi = K.apply(x) - y;
    const Vector drift_gap = J * sx.drift(x, y) - sy.drift(y, x);
    const Matrix noise_gap = J * sx.diffusion(x) - sy.diffusion(y);
    lhs.push_back(2.0 * drift_gap.dot(psi) + noise_gap.squaredNorm());
    z.push_back(psi.squaredNorm());
  }
  (void)n;

  DissipationReport rep;
  rep.samples_used = static_cast<int>(z.size());
  const long tiny = std::count_if(z.begin(), z.end(), [](double v) { return v < 1e-14; });
  if (tiny > 0.99 * z.size())
    throw Error(ErrorCode::DegenerateSamples,
                "|Kx - y|^2 is below 1e-14 at more than 99% of the samples; nothing to fit");

  double szz = 0.0, slz = 0.0, sll = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    szz += z[i] * z[i];
    slz += lhs[i] * z[i];
    sll += lhs[i] * lhs[i];
  }
  const double slope = slz / szz;
  rep.alpha1_hat = std::max(0.0, -slope);
  double ssr = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) ssr += (lhs[i] - slope * z[i]) * (lhs[i] - slope * z[i]);
  // Uncentred r^2, the usual choice for a regression through the origin.
  rep.regression_r2 = sll > 0.0 ? 1.0 - ssr / sll : 1.0;

  long violating = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double bound = -rep.alpha1_hat * z[i];
    if (lhs[i] > bound + 1e-12 * (std::abs(lhs[i]) + std::abs(bound))) ++violating;
  }
  rep.fraction_violating = static_cast<double>(violating) / z.size();
  return rep;
}

DecayCheck decay_rate_check(const Ensemble& ensemble, const MappingK& K) {
  DecayCheck out;
  const DefectCurve c = defect_curve(ensemble, K);
  if (*std::max_element(c.mean.begin(), c.mean.end()) < 1e-14) {
    out.no_signal = true;
    return out;
  }
  const std::size_t n = c.mean.size();
  out.slope = log_slope(c.times, c.mean, (n - 1) / 2, n);
  try {
    const DissipationReport rep = dissipation_report(ensemble, K);
    out.alpha1_hat = rep.alpha1_hat;
    out.dissipation_holds = rep.alpha1_hat > 0.0 && rep.fraction_violating <= 0.01;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateSamples) throw;
    out.no_signal = true;
    return out;
  }
  out.consistent = out.dissipation_holds && out.slope <= -0.8 * out.alpha1_hat;
  return out;
}

// ---------------------------------------------------------------------------
// Lyapunov spectrum

double t_quantile_975(int df) {
  static const double table[] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                                 2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                                 2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
  if (df < 1) return std::numeric_limits<double>::infinity();
  if (df <= 30) return table[df - 1];
  return 1.96 + 2.4 / df;
}

void merge_exponents(LyapunovSpectrum& spec) {
  spec.exponents.clear();
  spec.multiplicities.clear();
  const auto& raw = spec.raw_exponents;
  std::size_t start = 0;
  for (std::size_t i = 1; i <= raw.size(); ++i) {
    bool close = false;
    if (i < raw.size()) {
      const double tol = spec.ci_halfwidth > 0.0 ? 2.0 * spec.ci_halfwidth
                                                 : 1e-9 * std::max(1.0, std::abs(raw[i]));
      close = raw[i - 1] - raw[i] <= tol;
    }
    if (!close) {
      double sum = 0.0;
      for (std::size_t j = start; j < i; ++j) sum += raw[j];
      spec.exponents.push_back(sum / (i - start));
      spec.multiplicities.push_back(static_cast<int>(i - start));
      start = i;
    }
  }
}

namespace {

struct Cocycle {
  Matrix A0;
  std::vector<Matrix> Al;
  bool noisy = false;
};

Cocycle cocycle_of(const SdeSystem& sys) {
  Cocycle c;
  const auto* drift = std::get_if<LinearDrift>(&sys.drift_spec());
  if (!drift) throw Error(ErrorCode::InvalidArgument, "Lyapunov spectrum needs a linear drift");
  c.A0 = drift->A;
  if (const auto* d = std::get_if<LinearInStateDiffusion>(&sys.diffusion_spec())) {
    c.Al = d->A;
    for (const Matrix& m : c.Al) c.noisy = c.noisy || m.cwiseAbs().maxCoeff() > 0.0;
  } else if (const auto* d = std::get_if<ConstantDiffusion>(&sys.diffusion_spec())) {
    if (d->B.cwiseAbs().maxCoeff() > 0.0)
      throw Error(ErrorCode::InvalidArgument,
                  "additive noise does not define a linear cocycle; drop it or use state-linear diffusion");
  } else {
    throw Error(ErrorCode::InvalidArgument, "Lyapunov spectrum needs state-linear or zero diffusion");
  }
  return c;
}

struct SeedRun {
  std::vector<double> exponents;
  std::vector<double> log_norm;  // log |Phi(t_k)|, k = 1..steps
};

SeedRun run_qr(const Cocycle& c, int steps, double dt, const BrownianPath* path) {
  const int n = static_cast<int>(c.A0.rows());
  Matrix drift = c.A0;
  for (const Matrix& a : c.Al) drift -= 0.5 * a * a;
  drift *= dt;
  const Matrix fixed_step = drift.exp();

  SeedRun out;
  out.log_norm.reserve(steps);
  std::vector<double> sums(n, 0.0);
  Matrix Q = Matrix::Identity(n, n);
  Matrix Phi = Matrix::Identity(n, n);
  double log_scale = 0.0;
  Matrix step = fixed_step;
  for (int k = 0; k < steps; ++k) {
    if (path) {
      Matrix G = drift;
      auto dw = path->increment(k);
      for (std::size_t l = 0; l < c.Al.size(); ++l) G += c.Al[l] * dw[l];
      if (n == 1) step(0, 0) = std::exp(G(0, 0));
      else step = G.exp();
    }
    Eigen::HouseholderQR<Matrix> qr(step * Q);
    Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
    Q = qr.householderQ() * Matrix::Identity(n, n);
    for (int i = 0; i < n; ++i) {
      if (R(i, i) < 0) Q.col(i) = -Q.col(i);
      sums[i] += std::log(std::abs(R(i, i)));
    }
    Phi = step * Phi;
    const double nrm = Phi.norm();
    if (nrm > 1e100 || nrm < 1e-100) {
      Phi /= nrm;
      log_scale += std::log(nrm);
    }
    // Spectral norm via the largest singular value of the rescaled product.
    const double spectral = n == 1 ? std::abs(Phi(0, 0)) : Eigen::JacobiSVD<Matrix>(Phi).singularValues()[0];
    out.log_norm.push_back(std::log(spectral) + log_scale);
  }
  const double T = steps * dt;
  for (double s : sums) out.exponents.push_back(s / T);
  std::sort(out.exponents.begin(), out.exponents.end(), std::greater<>());
  return out;
}

}  // namespace

LyapunovSpectrum lyapunov_spectrum(const SdeSystem& sys, const LyapunovOptions& opt) {
  if (!(opt.horizon > 0.0) || !(opt.dt > 0.0))
    throw Error(ErrorCode::InvalidArgument, "Lyapunov horizon and dt must be positive");
  if (opt.n_seeds < 8) throw Error(ErrorCode::InvalidArgument, "Lyapunov spectrum needs at least 8 seeds");
  const Cocycle c = cocycle_of(sys);
  const int n = static_cast<int>(c.A0.rows());
  const int steps = std::max(1, static_cast<int>(std::lround(opt.horizon / opt.dt)));
  const TimeGrid grid(steps * opt.dt, steps);

  std::vector<SeedRun> runs;
  if (!c.noisy) {
    // Without noise every seed traces the same flow.
    runs.push_back(run_qr(c, steps, grid.dt(), nullptr));
  } else {
    for (int s = 0; s < opt.n_seeds; ++s) {
      const BrownianPath path =
          generate_brownian_path(grid, static_cast<int>(c.Al.size()), opt.seed, static_cast<std::uint64_t>(s));
      runs.push_back(run_qr(c, steps, grid.dt(), &path));
    }
  }

  LyapunovSpectrum spec;
  spec.horizon_used = grid.horizon();
  spec.n_seeds = static_cast<int>(runs.size());
  spec.envelope_eps = opt.envelope_eps;
  const int m = spec.n_seeds;
  for (int i = 0; i < n; ++i) {
    double mean = 0.0;
    for (const auto& r : runs) mean += r.exponents[i];
    mean /= m;
    double var = 0.0;
    for (const auto& r : runs) var += (r.exponents[i] - mean) * (r.exponents[i] - mean);
    const double ci = m > 1 ? t_quantile_975(m - 1) * std::sqrt(var / (m - 1) / m) : 0.0;
    spec.raw_exponents.push_back(mean);
    spec.raw_ci.push_back(ci);
    spec.ci_halfwidth = std::max(spec.ci_halfwidth, ci);
  }
  merge_exponents(spec);

  const double rate = spec.raw_exponents.front() + opt.envelope_eps;
  double log_M = 0.0;  // t = 0 contributes |Phi(0)| = 1
  for (const auto& r : runs)
    for (int k = 0; k < steps; ++k) log_M = std::max(log_M, r.log_norm[k] - rate * grid.t(k + 1));
  spec.envelope_M = std::exp(log_M);

  const double limit = 0.1 * std::max(1.0, std::abs(spec.raw_exponents.front()));
  if (spec.ci_halfwidth > limit)
    throw Error(ErrorCode::HorizonTooShort, "Lyapunov CI half-width " + std::to_string(spec.ci_halfwidth) +
                                                " exceeds " + std::to_string(limit) + "; lengthen the horizon");
  return spec;
}

const char* prediction_name(AsymptoticPrediction p) {
  switch (p) {
    case AsymptoticPrediction::Holds: return "Holds";
    case AsymptoticPrediction::FailsWithPositiveMismatch: return "FailsWithPositiveMismatch";
    case AsymptoticPrediction::Inconclusive: return "Inconclusive";
  }
  return "Unknown";
}

AsymptoticPrediction asymptotic_similarity_prediction(const LyapunovSpectrum& x, const LyapunovSpectrum& y) {
  if (x.raw_exponents.size() != y.raw_exponents.size())
    throw Error(ErrorCode::DimensionMismatch, "spectra live in different dimensions");
  bool all_equal = true, positive_mismatch = false;
  for (std::size_t i = 0; i < x.raw_exponents.size(); ++i) {
    const double a = x.raw_exponents[i], b = y.raw_exponents[i];
    const double band = 2.0 * (x.ci_halfwidth + y.ci_halfwidth) + 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
    if (std::abs(a - b) <= band) continue;
    all_equal = false;
    if (a > x.ci_halfwidth || b > y.ci_halfwidth) positive_mismatch = true;
  }
  if (all_equal) return AsymptoticPrediction::Holds;
  return positive_mismatch ? AsymptoticPrediction::FailsWithPositiveMismatch : AsymptoticPrediction::Inconclusive;
}

// ---------------------------------------------------------------------------
// Assumption probe

AssumptionProbe assumption_probe(const SdeSystem& sys, int n_samples, double radius, std::uint64_t seed) {
  if (n_samples < 1000) throw Error(ErrorCode::InvalidArgument, "assumption probe needs n_samples >= 1000");
  if (!(radius > 0.0)) throw Error(ErrorCode::InvalidArgument, "probe radius must be positive");
  const int n = sys.dim();
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif;

  auto random_direction = [&] {
    Vector d(n);
    for (int i = 0; i < n; ++i) d[i] = normal(rng);
    const double nrm = d.norm();
    return nrm > 0.0 ? Vector(d / nrm) : Vector(Vector::Unit(n, 0));
  };
  auto clamp_to_ball = [&](Vector v) {
    const double nrm = v.norm();
    return nrm > radius ? Vector(v * (radius / nrm)) : v;
  };
  auto f = [&](const Vector& u) { return sys.drift(u, u); };

  AssumptionProbe p;
  p.n_samples = n_samples;
  p.radius = radius;
  p.c1_hat = -std::numeric_limits<double>::infinity();
  p.c2_hat = -std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, double>> coercive;  // (|u|^2, Q(u))
  for (int s = 0; s < n_samples; ++s) {
    const Vector u = random_direction() * (radius * std::pow(unif(rng), 1.0 / n));
    const double scale = radius * std::pow(10.0, -6.0 * unif(rng));
    const Vector v = clamp_to_ball(u + scale * random_direction());
    const Vector du = u - v;
    const double d2 = du.squaredNorm();
    const Vector fu = f(u), fv = f(v);
    const Matrix su = sys.diffusion(u), sv = sys.diffusion(v);
    if (d2 > 0.0) {
      const Vector df = fu - fv;
      const double ds = (su - sv).norm();
      p.c1_hat = std::max(p.c1_hat, (2.0 * df.dot(du) + ds * ds) / d2);
      p.L_hat = std::max(p.L_hat, (df.norm() + ds) / std::sqrt(d2));
    }
    const double q = 2.0 * fu.dot(u) + su.squaredNorm();
    coercive.emplace_back(u.squaredNorm(), q);
    if (u.norm() >= 0.5 * radius) p.c2_hat = std::max(p.c2_hat, q / u.squaredNorm());
  }
  if (!std::isfinite(p.c1_hat)) p.c1_hat = 0.0;
  if (!std::isfinite(p.c2_hat)) p.c2_hat = 0.0;
  for (const auto& [u2, q] : coercive) p.M1_hat = std::max(p.M1_hat, q - p.c2_hat * u2);
  return p;
}

}  // namespace simil
