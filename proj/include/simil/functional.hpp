#pragma once

// Monte Carlo estimates of conjugacy defects and cost functionals, similarity
// degrees, running time averages and the similarity classification.

#include "simil/mapping.hpp"
#include "simil/sde_core.hpp"

#include <string>
#include <vector>

namespace simil {

enum class CostKind { DefectAtT, FirstMomentDefectAtT, TimeAverageJ, SemiJ, TerminalJtilde, PreExitDefect };
const char* cost_kind_name(CostKind kind);

struct CostEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int n_paths = 0;
  double dt = 0.0;
  CostKind kind = CostKind::TimeAverageJ;
};

/// Sample mean and standard error of the mean.
CostEstimate summarize(const std::vector<double>& samples, double dt, CostKind kind);

/// |K(X_t) - Y_t|^2 on every grid point of one path.
void path_sq_defects(const PathPair& pair, const MappingK& K, std::vector<double>& out);

/// E|K(X_t) - Y_t|^2. Throws GridMiss unless t is a grid point.
CostEstimate conjugacy_defect(const Ensemble& ensemble, const MappingK& K, double t);
/// E|K(X_t) - Y_t|, the first-moment defect used for asymptotic similarity.
CostEstimate first_moment_defect(const Ensemble& ensemble, const MappingK& K, double t);

struct DefectCurve {
  std::vector<double> times;
  std::vector<double> mean;
  std::vector<double> std_error;
};
/// Squared defect (or first moment when `first_moment`) at every grid point.
DefectCurve defect_curve(const Ensemble& ensemble, const MappingK& K, bool first_moment = false);

/// (1/T) int_0^T |K(X) - Y|^2 dt for each path, trapezoid rule.
std::vector<double> per_path_cost_J(const Ensemble& ensemble, const MappingK& K);
/// Same time average for an arbitrary per-grid-point integrand.
double trapezoid_average(const std::vector<double>& values, double dt, double T);

/// J[K] = E[(1/T) int_0^T |K(X) - Y|^2 dt], trapezoid rule per path.
CostEstimate cost_J(const Ensemble& ensemble, const MappingK& K);
/// J[K, R]: the integrand uses R; K only fixes y0 = K(x0), which is checked.
CostEstimate cost_J_semi(const Ensemble& ensemble, const MappingK& K, const MappingK& R);
/// J + E|K(X_T) - Y_T|.
CostEstimate terminal_cost_Jtilde(const Ensemble& ensemble, const MappingK& K);

/// rho: [0, inf) -> [0, 1], decreasing, rho(0) = 1.
class SimilarityDegreeFn {
 public:
  static SimilarityDegreeFn log_ratio() { return SimilarityDegreeFn(); }
  /// Decreasing tabulation; beyond the last knot it decays like last_value * x_last / x.
  static SimilarityDegreeFn custom(std::vector<double> knots, std::vector<double> values);

  double operator()(double x) const;
  bool is_custom() const noexcept { return custom_; }

 private:
  bool custom_ = false;
  std::vector<double> knots_, values_;
};

/// rho(max(j, 0)).
double similarity_degree(double j, const SimilarityDegreeFn& rho = SimilarityDegreeFn::log_ratio());

struct SllnCurve {
  std::vector<double> times;
  std::vector<double> running_average;
};
/// avg_k = (1/t_k) sum_{j=1..k} phi(t_j) dt with phi the mean squared defect; avg_0 = phi(0).
SllnCurve slln_curve(const Ensemble& ensemble, const MappingK& K);
SllnCurve slln_curve(const DefectCurve& squared_defect);

struct Thresholds {
  double eps_c = 0.0;
  double eps_a = 0.0;
  double eps_w = 0.0;
};
/// 10 * (3 se + 2 dt L); the defect bands use the largest pointwise std_error.
Thresholds default_thresholds(const DefectCurve& squared_defect, const CostEstimate& J, double L_hat);

enum class SimilarityClass { Complete, Asymptotic, Weak, Undetermined };
const char* similarity_class_name(SimilarityClass c);

struct SimilarityVerdict {
  SimilarityClass cls = SimilarityClass::Undetermined;
  double max_defect = 0.0;
  double final_defect = 0.0;
  /// Least-squares slope of log defect over the last third of the horizon.
  double tail_decay_rate = 0.0;
  double slln_final = 0.0;
  Thresholds thresholds;
};

/// Least-squares slope of log(values) against times over indices [from, to),
/// skipping non-positive values. NaN if fewer than two usable points.
double log_slope(const std::vector<double>& times, const std::vector<double>& values, std::size_t from,
                 std::size_t to);

SimilarityVerdict classify_similarity(const DefectCurve& squared_defect, const SllnCurve& slln,
                                      const Thresholds& thresholds);

}  // namespace simil
