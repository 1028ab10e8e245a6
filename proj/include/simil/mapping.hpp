#pragma once

// Candidate conjugating maps K: linear, affine, or a monotone 1-d tabulation.

#include "simil/sde_core.hpp"

#include <iosfwd>
#include <string>
#include <variant>
#include <vector>

namespace simil {

inline constexpr double kMaxConditionNumber = 1e12;

struct LinearMap {
  Matrix K;
};

struct AffineMap {
  Matrix K;
  Vector b;
};

/// Piecewise cubic Hermite interpolant with Fritsch-Butland slopes. With
/// strictly monotone values the interpolant is strictly monotone too, so it is
/// a homeomorphism of the knot interval. Outside the knots it extends linearly.
class Tabulated1d {
 public:
  Tabulated1d() = default;
  Tabulated1d(std::vector<double> knots, std::vector<double> values);

  const std::vector<double>& knots() const noexcept { return knots_; }
  const std::vector<double>& values() const noexcept { return values_; }
  /// +1 strictly increasing, -1 strictly decreasing, 0 otherwise.
  int monotone_direction() const noexcept { return direction_; }
  bool is_monotone() const noexcept { return direction_ != 0; }

  double eval(double x, bool* extrapolated = nullptr) const;
  double derivative(double x) const;
  /// Bisection on the interpolant; throws SingularMap unless strictly monotone.
  double inverse(double y) const;

  bool operator==(const Tabulated1d& other) const {
    return knots_ == other.knots_ && values_ == other.values_;
  }

 private:
  std::size_t segment(double x) const;

  std::vector<double> knots_;
  std::vector<double> values_;
  std::vector<double> slopes_;
  int direction_ = 0;
};

class MappingK {
 public:
  using Variant = std::variant<LinearMap, AffineMap, Tabulated1d>;

  MappingK() : MappingK(LinearMap{Matrix::Identity(1, 1)}) {}
  MappingK(Variant v);

  static MappingK identity(int n) { return MappingK(LinearMap{Matrix::Identity(n, n)}); }
  static MappingK linear(const Matrix& K) { return MappingK(LinearMap{K}); }
  static MappingK affine(const Matrix& K, const Vector& b) { return MappingK(AffineMap{K, b}); }
  static MappingK tabulated(std::vector<double> knots, std::vector<double> values) {
    return MappingK(Tabulated1d(std::move(knots), std::move(values)));
  }

  const Variant& variant() const noexcept { return v_; }
  /// "linear", "affine" or "tabulated1d".
  const char* kind() const noexcept;
  int dim() const noexcept { return dim_; }

  Vector apply(const Vector& x) const;
  /// Same as apply; sets `extrapolated` when a tabulated map is evaluated outside its knots.
  Vector apply(const Vector& x, bool& extrapolated) const;
  void apply_into(std::span<const double> x, std::span<double> out) const;
  Matrix jacobian(const Vector& x) const;
  Vector inverse_apply(const Vector& y) const;

  /// Linear/affine: 2-norm condition of K. Tabulated: ratio of extreme knot slopes,
  /// infinite when the values are not strictly monotone.
  double condition_number() const;
  bool is_admissible() const;

  /// Flat parameter vector: K row-major (then b), or the tabulated values.
  std::vector<double> parameters() const;
  MappingK with_parameters(const std::vector<double>& params) const;
  /// this + eps * direction, parameter-wise. Both maps must be the same kind and shape.
  MappingK perturbed(const MappingK& direction, double eps) const;

  /// Linear or affine part as (K, b); false for tabulated maps.
  bool affine_parts(Matrix& K, Vector& b) const;

  bool operator==(const MappingK& other) const;

 private:
  Variant v_;
  int dim_ = 1;
};

struct HomeoReport {
  bool is_injective_on_sample = false;
  double min_jacobian_singular_value = 0.0;
  double condition_number = 0.0;
  Vector domain_lo, domain_hi;
  /// Fraction of sampled Y points inside the bounding box of the sampled images K(X).
  double image_hull_coverage = 0.0;
  int n_samples = 0;
};

/// Samples up to `max_samples` X-trajectory points, evenly strided over paths and time.
HomeoReport check_homeomorphism(const MappingK& K, const Ensemble& ensemble, int max_samples = 2000);

/// CSV knot file `x,value`.
void write_knots_csv(std::ostream& out, const Tabulated1d& map);
Tabulated1d read_knots_csv(std::istream& in);

}  // namespace simil
