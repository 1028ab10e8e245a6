#include "simil/functional.hpp"

#include "simil/errors.hpp"
#include "simil/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

namespace simil {

const char* cost_kind_name(CostKind kind) {
  switch (kind) {
    case CostKind::DefectAtT: return "DefectAtT";
    case CostKind::FirstMomentDefectAtT: return "FirstMomentDefectAtT";
    case CostKind::TimeAverageJ: return "TimeAverageJ";
    case CostKind::SemiJ: return "SemiJ";
    case CostKind::TerminalJtilde: return "TerminalJtilde";
    case CostKind::PreExitDefect: return "PreExitDefect";
  }
  return "Unknown";
}

CostEstimate summarize(const std::vector<double>& samples, double dt, CostKind kind) {
  CostEstimate est;
  est.kind = kind;
  est.dt = dt;
  est.n_paths = static_cast<int>(samples.size());
  if (samples.empty()) return est;
  double sum = 0.0;
  for (double s : samples) sum += s;
  const double mean = sum / samples.size();
  double ss = 0.0;
  for (double s : samples) ss += (s - mean) * (s - mean);
  est.value = mean;
  est.std_error = samples.size() > 1 ? std::sqrt(ss / (samples.size() - 1) / samples.size()) : 0.0;
  return est;
}

void path_sq_defects(const PathPair& pair, const MappingK& K, std::vector<double>& out) {
  const int n = pair.dim;
  if (K.dim() != n) throw Error(ErrorCode::DimensionMismatch, "map dimension differs from ensemble");
  const std::size_t points = static_cast<std::size_t>(pair.grid.n_points());
  out.resize(points);
  Matrix Km;
  Vector b;
  if (K.affine_parts(Km, b)) {
    std::vector<double> rowmajor(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < n; ++k) rowmajor[i * n + k] = Km(i, k);
    const bool has_offset = std::holds_alternative<AffineMap>(K.variant());
    kernels::sq_defect_linear(n, rowmajor.data(), has_offset ? b.data() : nullptr, pair.x.data(),
                              pair.y.data(), points, out.data());
    return;
  }
  std::vector<double> img(n);
  for (std::size_t k = 0; k < points; ++k) {
    K.apply_into(pair.x_at(static_cast<int>(k)), img);
    auto y = pair.y_at(static_cast<int>(k));
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double r = img[i] - y[i];
      s += r * r;
    }
    out[k] = s;
  }
}

namespace {

int grid_index(const Ensemble& ensemble, double t) {
  auto k = ensemble.grid().index_of(t);
  if (!k) throw Error(ErrorCode::GridMiss, "time " + std::to_string(t) + " is not a grid point");
  return *k;
}

void require_paths(const Ensemble& ensemble) {
  if (ensemble.n_paths() == 0) throw Error(ErrorCode::InvalidArgument, "ensemble is empty");
}

}  // namespace

CostEstimate conjugacy_defect(const Ensemble& ensemble, const MappingK& K, double t) {
  require_paths(ensemble);
  const int k = grid_index(ensemble, t);
  std::vector<double> samples, buf;
  for (const auto& pair : ensemble.pairs) {
    path_sq_defects(pair, K, buf);
    samples.push_back(buf[k]);
  }
  return summarize(samples, ensemble.grid().dt(), CostKind::DefectAtT);
}

CostEstimate first_moment_defect(const Ensemble& ensemble, const MappingK& K, double t) {
  require_paths(ensemble);
  const int k = grid_index(ensemble, t);
  std::vector<double> samples, buf;
  for (const auto& pair : ensemble.pairs) {
    path_sq_defects(pair, K, buf);
    samples.push_back(std::sqrt(buf[k]));
  }
  return summarize(samples, ensemble.grid().dt(), CostKind::FirstMomentDefectAtT);
}

DefectCurve defect_curve(const Ensemble& ensemble, const MappingK& K, bool first_moment) {
  require_paths(ensemble);
  const TimeGrid& grid = ensemble.grid();
  const int points = grid.n_points();
  std::vector<double> sum(points, 0.0), sumsq(points, 0.0), buf;
  for (const auto& pair : ensemble.pairs) {
    path_sq_defects(pair, K, buf);
    for (int k = 0; k < points; ++k) {
      const double v = first_moment ? std::sqrt(buf[k]) : buf[k];
      sum[k] += v;
      sumsq[k] += v * v;
    }
  }
  const double n = ensemble.n_paths();
  DefectCurve c;
  c.times.resize(points);
  c.mean.resize(points);
  c.std_error.resize(points);
  for (int k = 0; k < points; ++k) {
    c.times[k] = grid.t(k);
    c.mean[k] = sum[k] / n;
    const double var = n > 1 ? std::max(0.0, (sumsq[k] - n * c.mean[k] * c.mean[k]) / (n - 1)) : 0.0;
    c.std_error[k] = std::sqrt(var / n);
  }
  return c;
}

double trapezoid_average(const std::vector<double>& phi, double dt, double T) {
  double inner = 0.0;
  for (std::size_t k = 1; k + 1 < phi.size(); ++k) inner += phi[k];
  return (0.5 * (phi.front() + phi.back()) + inner) * dt / T;
}

std::vector<double> per_path_cost_J(const Ensemble& ensemble, const MappingK& K) {
  require_paths(ensemble);
  const TimeGrid& grid = ensemble.grid();
  const int n = ensemble.n_paths();
  std::vector<double> samples(n);
  // Each worker owns a contiguous slice of paths, so the result does not
  // depend on the worker count.
  auto run = [&](int lo, int hi) {
    std::vector<double> buf;
    for (int i = lo; i < hi; ++i) {
      path_sq_defects(ensemble.pairs[i], K, buf);
      samples[i] = trapezoid_average(buf, grid.dt(), grid.horizon());
    }
  };
  const int workers = std::clamp(ensemble.config.workers, 1, std::max(1, n / 64));
  if (workers == 1) {
    run(0, n);
    return samples;
  }
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(run, n * w / workers, n * (w + 1) / workers);
  for (auto& t : pool) t.join();
  return samples;
}

CostEstimate cost_J(const Ensemble& ensemble, const MappingK& K) {
  return summarize(per_path_cost_J(ensemble, K), ensemble.grid().dt(), CostKind::TimeAverageJ);
}

CostEstimate cost_J_semi(const Ensemble& ensemble, const MappingK& K, const MappingK& R) {
  require_paths(ensemble);
  const Vector& x0 = ensemble.config.x0;
  const Vector& y0 = ensemble.config.y0;
  if ((K.apply(x0) - y0).norm() > 1e-9 * (1.0 + y0.norm()))
    throw Error(ErrorCode::InvalidArgument, "semi-conjugacy cost needs y0 = K(x0)");
  CostEstimate est = cost_J(ensemble, R);
  est.kind = CostKind::SemiJ;
  return est;
}

CostEstimate terminal_cost_Jtilde(const Ensemble& ensemble, const MappingK& K) {
  require_paths(ensemble);
  const TimeGrid& grid = ensemble.grid();
  std::vector<double> samples, buf;
  for (const auto& pair : ensemble.pairs) {
    path_sq_defects(pair, K, buf);
    samples.push_back(trapezoid_average(buf, grid.dt(), grid.horizon()) + std::sqrt(buf.back()));
  }
  return summarize(samples, grid.dt(), CostKind::TerminalJtilde);
}

// ---------------------------------------------------------------------------
// Similarity degree

SimilarityDegreeFn SimilarityDegreeFn::custom(std::vector<double> knots, std::vector<double> values) {
  if (knots.size() < 2 || knots.size() != values.size())
    throw Error(ErrorCode::InvalidArgument, "custom similarity degree needs matching knots and values");
  if (knots.front() != 0.0 || values.front() != 1.0)
    throw Error(ErrorCode::InvalidArgument, "custom similarity degree must start at rho(0) = 1");
  for (std::size_t i = 1; i < knots.size(); ++i) {
    if (!(knots[i] > knots[i - 1]))
      throw Error(ErrorCode::InvalidArgument, "similarity degree knots must increase");
    if (!(values[i] < values[i - 1]) || values[i] < 0.0)
      throw Error(ErrorCode::InvalidArgument, "similarity degree values must decrease within [0, 1]");
  }
  SimilarityDegreeFn f;
  f.custom_ = true;
  f.knots_ = std::move(knots);
  f.values_ = std::move(values);
  return f;
}

double SimilarityDegreeFn::operator()(double x) const {
  x = std::max(x, 0.0);
  if (!custom_) {
    if (std::isinf(x)) return 0.0;
    if (x < 1e-8) return 1.0 - x / 2.0 + x * x / 3.0;
    return std::log1p(x) / x;
  }
  if (x >= knots_.back()) return std::isinf(x) ? 0.0 : values_.back() * knots_.back() / x;
  auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
  const std::size_t k = static_cast<std::size_t>(it - knots_.begin()) - 1;
  const double w = (x - knots_[k]) / (knots_[k + 1] - knots_[k]);
  return values_[k] + w * (values_[k + 1] - values_[k]);
}

double similarity_degree(double j, const SimilarityDegreeFn& rho) { return rho(std::max(j, 0.0)); }

// ---------------------------------------------------------------------------
// SLLN and classification

SllnCurve slln_curve(const DefectCurve& c) {
  SllnCurve s;
  s.times = c.times;
  s.running_average.resize(c.mean.size());
  if (c.mean.empty()) return s;
  s.running_average[0] = c.mean[0];
  double acc = 0.0;
  for (std::size_t k = 1; k < c.mean.size(); ++k) {
    const double dt = c.times[k] - c.times[k - 1];
    acc += c.mean[k] * dt;
    s.running_average[k] = acc / c.times[k];
  }
  return s;
}

SllnCurve slln_curve(const Ensemble& ensemble, const MappingK& K) {
  return slln_curve(defect_curve(ensemble, K));
}

Thresholds default_thresholds(const DefectCurve& c, const CostEstimate& J, double L_hat) {
  double se = 0.0;
  for (double e : c.std_error) se = std::max(se, e);
  const double dt = c.times.size() > 1 ? c.times[1] - c.times[0] : 0.0;
  Thresholds t;
  t.eps_c = t.eps_a = 10.0 * (3.0 * se + 2.0 * dt * L_hat);
  t.eps_w = 10.0 * (3.0 * J.std_error + 2.0 * dt * L_hat);
  return t;
}

const char* similarity_class_name(SimilarityClass c) {
  switch (c) {
    case SimilarityClass::Complete: return "Complete";
    case SimilarityClass::Asymptotic: return "Asymptotic";
    case SimilarityClass::Weak: return "Weak";
    case SimilarityClass::Undetermined: return "Undetermined";
  }
  return "Unknown";
}

double log_slope(const std::vector<double>& times, const std::vector<double>& values, std::size_t from,
                 std::size_t to) {
  double st = 0, sl = 0, stt = 0, stl = 0;
  int m = 0;
  for (std::size_t k = from; k < to && k < values.size(); ++k) {
    if (!(values[k] > 0.0)) continue;
    const double l = std::log(values[k]);
    st += times[k];
    sl += l;
    stt += times[k] * times[k];
    stl += times[k] * l;
    ++m;
  }
  if (m < 2) return std::numeric_limits<double>::quiet_NaN();
  const double denom = m * stt - st * st;
  if (denom <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (m * stl - st * sl) / denom;
}

SimilarityVerdict classify_similarity(const DefectCurve& c, const SllnCurve& slln, const Thresholds& th) {
  if (c.mean.size() != slln.running_average.size())
    throw Error(ErrorCode::DimensionMismatch, "defect and SLLN curves are on different grids");
  SimilarityVerdict v;
  v.thresholds = th;
  if (c.mean.empty()) return v;
  v.max_defect = *std::max_element(c.mean.begin(), c.mean.end());
  v.final_defect = c.mean.back();
  v.slln_final = slln.running_average.back();
  const std::size_t n = c.mean.size();
  v.tail_decay_rate = log_slope(c.times, c.mean, n - std::max<std::size_t>(2, n / 3), n);

  if (v.max_defect <= th.eps_c) v.cls = SimilarityClass::Complete;
  else if (v.tail_decay_rate < 0.0 && v.final_defect <= th.eps_a) v.cls = SimilarityClass::Asymptotic;
  else if (v.slln_final <= th.eps_w) v.cls = SimilarityClass::Weak;
  else v.cls = SimilarityClass::Undetermined;
  return v;
}

}  // namespace simil
