#include "simil/mapping.hpp"

#include "simil/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace simil {

// ---------------------------------------------------------------------------
// Tabulated1d

namespace {

int sign(double v) { return (v > 0) - (v < 0); }

}  // namespace

Tabulated1d::Tabulated1d(std::vector<double> knots, std::vector<double> values)
    : knots_(std::move(knots)), values_(std::move(values)) {
  const std::size_t n = knots_.size();
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "tabulated map needs at least two knots");
  if (values_.size() != n) throw Error(ErrorCode::DimensionMismatch, "knot and value counts differ");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(knots_[i]) || !std::isfinite(values_[i]))
      throw Error(ErrorCode::InvalidArgument, "tabulated map has non-finite entries");
    if (i > 0 && !(knots_[i] > knots_[i - 1]))
      throw Error(ErrorCode::InvalidArgument, "knots must be strictly increasing");
  }

  std::vector<double> h(n - 1), delta(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    h[i] = knots_[i + 1] - knots_[i];
    delta[i] = (values_[i + 1] - values_[i]) / h[i];
  }
  direction_ = sign(delta[0]);
  for (double d : delta)
    if (sign(d) != direction_ || d == 0.0) direction_ = 0;

  slopes_.assign(n, 0.0);
  if (n == 2) {
    slopes_[0] = slopes_[1] = delta[0];
    return;
  }
  for (std::size_t k = 1; k + 1 < n; ++k) {
    const double d0 = delta[k - 1], d1 = delta[k];
    if (sign(d0) * sign(d1) <= 0) continue;
    const double w1 = 2 * h[k] + h[k - 1];
    const double w2 = h[k] + 2 * h[k - 1];
    slopes_[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
  }
  // Three-point end slopes, limited so the end segments stay shape preserving.
  auto end_slope = [](double h0, double h1, double d0, double d1) {
    double m = ((2 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (sign(m) != sign(d0)) return 0.0;
    if (sign(d0) != sign(d1) && std::abs(m) > 3 * std::abs(d0)) return 3 * d0;
    return m;
  };
  slopes_[0] = end_slope(h[0], h[1], delta[0], delta[1]);
  slopes_[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
}

std::size_t Tabulated1d::segment(double x) const {
  auto it = std::upper_bound(knots_.begin(), knots_.end(), x);
  std::size_t k = it == knots_.begin() ? 0 : static_cast<std::size_t>(it - knots_.begin()) - 1;
  return std::min(k, knots_.size() - 2);
}

double Tabulated1d::eval(double x, bool* extrapolated) const {
  const std::size_t n = knots_.size();
  if (x < knots_.front() || x > knots_.back()) {
    if (extrapolated) *extrapolated = true;
    if (x < knots_.front()) return values_.front() + slopes_.front() * (x - knots_.front());
    return values_.back() + slopes_[n - 1] * (x - knots_.back());
  }
  const std::size_t k = segment(x);
  const double h = knots_[k + 1] - knots_[k];
  const double t = (x - knots_[k]) / h;
  const double t2 = t * t, t3 = t2 * t;
  return (2 * t3 - 3 * t2 + 1) * values_[k] + (t3 - 2 * t2 + t) * h * slopes_[k] +
         (-2 * t3 + 3 * t2) * values_[k + 1] + (t3 - t2) * h * slopes_[k + 1];
}

double Tabulated1d::derivative(double x) const {
  if (x < knots_.front()) return slopes_.front();
  if (x > knots_.back()) return slopes_.back();
  const std::size_t k = segment(x);
  const double h = knots_[k + 1] - knots_[k];
  const double t = (x - knots_[k]) / h;
  const double t2 = t * t;
  return ((6 * t2 - 6 * t) * values_[k] + (3 * t2 - 4 * t + 1) * h * slopes_[k] +
          (-6 * t2 + 6 * t) * values_[k + 1] + (3 * t2 - 2 * t) * h * slopes_[k + 1]) /
         h;
}

double Tabulated1d::inverse(double y) const {
  if (direction_ == 0)
    throw Error(ErrorCode::SingularMap, "tabulated map is not strictly monotone, cannot invert");
  const double lo_val = direction_ > 0 ? values_.front() : values_.back();
  const double hi_val = direction_ > 0 ? values_.back() : values_.front();
  if (y < lo_val || y > hi_val) {
    const bool beyond_first = direction_ > 0 ? y < lo_val : y > hi_val;
    const double slope = beyond_first ? slopes_.front() : slopes_.back();
    if (slope == 0.0) throw Error(ErrorCode::SingularMap, "value outside the range of the tabulated map");
    return beyond_first ? knots_.front() + (y - values_.front()) / slope
                        : knots_.back() + (y - values_.back()) / slope;
  }
  // Locate the bracketing segment on the values, then bisect inside it.
  std::size_t k = 0;
  for (std::size_t i = 0; i + 1 < knots_.size(); ++i) {
    const double a = values_[i], b = values_[i + 1];
    if ((y - a) * (y - b) <= 0.0) {
      k = i;
      break;
    }
  }
  double a = knots_[k], b = knots_[k + 1];
  const double fa = eval(a) - y;
  if (fa == 0.0) return a;
  for (int it = 0; it < 200; ++it) {
    const double m = 0.5 * (a + b);
    if (m <= a || m >= b) break;
    const double fm = eval(m) - y;
    if (fm == 0.0) return m;
    if (sign(fm) == sign(fa)) a = m;
    else b = m;
  }
  return 0.5 * (a + b);
}

// ---------------------------------------------------------------------------
// MappingK

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double matrix_condition(const Matrix& K) {
  Eigen::JacobiSVD<Matrix> svd(K);
  const auto& s = svd.singularValues();
  const double smin = s[s.size() - 1];
  if (smin == 0.0) return std::numeric_limits<double>::infinity();
  return s[0] / smin;
}

void check_square(const Matrix& K) {
  if (K.rows() < 1 || K.rows() != K.cols())
    throw Error(ErrorCode::DimensionMismatch, "map matrix must be square");
  if (!K.allFinite()) throw Error(ErrorCode::InvalidArgument, "map matrix has non-finite entries");
}

}  // namespace

MappingK::MappingK(Variant v) : v_(std::move(v)) {
  dim_ = std::visit(overloaded{[](const LinearMap& m) {
                                 check_square(m.K);
                                 return static_cast<int>(m.K.rows());
                               },
                               [](const AffineMap& m) {
                                 check_square(m.K);
                                 if (m.b.size() != m.K.rows())
                                   throw Error(ErrorCode::DimensionMismatch, "affine offset size differs");
                                 return static_cast<int>(m.K.rows());
                               },
                               [](const Tabulated1d&) { return 1; }},
                    v_);
}

const char* MappingK::kind() const noexcept {
  switch (v_.index()) {
    case 0: return "linear";
    case 1: return "affine";
    default: return "tabulated1d";
  }
}

void MappingK::apply_into(std::span<const double> x, std::span<double> out) const {
  std::visit(overloaded{[&](const LinearMap& m) {
                          for (int i = 0; i < dim_; ++i) {
                            double acc = 0.0;
                            for (int k = 0; k < dim_; ++k) acc += m.K(i, k) * x[k];
                            out[i] = acc;
                          }
                        },
                        [&](const AffineMap& m) {
                          for (int i = 0; i < dim_; ++i) {
                            double acc = 0.0;
                            for (int k = 0; k < dim_; ++k) acc += m.K(i, k) * x[k];
                            acc += m.b[i];
                            out[i] = acc;
                          }
                        },
                        [&](const Tabulated1d& m) { out[0] = m.eval(x[0]); }},
             v_);
}

Vector MappingK::apply(const Vector& x) const {
  bool ignored = false;
  return apply(x, ignored);
}

Vector MappingK::apply(const Vector& x, bool& extrapolated) const {
  if (x.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "map input dimension mismatch");
  Vector out(dim_);
  if (const auto* t = std::get_if<Tabulated1d>(&v_)) {
    out[0] = t->eval(x[0], &extrapolated);
    return out;
  }
  apply_into({x.data(), static_cast<std::size_t>(dim_)}, {out.data(), static_cast<std::size_t>(dim_)});
  return out;
}

Matrix MappingK::jacobian(const Vector& x) const {
  if (x.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "map input dimension mismatch");
  return std::visit(overloaded{[](const LinearMap& m) -> Matrix { return m.K; },
                               [](const AffineMap& m) -> Matrix { return m.K; },
                               [&](const Tabulated1d& m) -> Matrix {
                                 return Matrix::Constant(1, 1, m.derivative(x[0]));
                               }},
                    v_);
}

Vector MappingK::inverse_apply(const Vector& y) const {
  if (y.size() != dim_) throw Error(ErrorCode::DimensionMismatch, "map input dimension mismatch");
  if (const auto* t = std::get_if<Tabulated1d>(&v_)) return Vector::Constant(1, t->inverse(y[0]));
  Matrix K;
  Vector b;
  affine_parts(K, b);
  if (!(matrix_condition(K) <= kMaxConditionNumber))
    throw Error(ErrorCode::SingularMap, "map matrix condition number exceeds 1e12");
  return K.colPivHouseholderQr().solve(y - b);
}

double MappingK::condition_number() const {
  if (const auto* t = std::get_if<Tabulated1d>(&v_)) {
    if (!t->is_monotone()) return std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    const auto& xs = t->knots();
    const auto& ys = t->values();
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
      const double s = std::abs((ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]));
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    return hi / lo;
  }
  Matrix K;
  Vector b;
  affine_parts(K, b);
  return matrix_condition(K);
}

bool MappingK::is_admissible() const { return condition_number() <= kMaxConditionNumber; }

std::vector<double> MappingK::parameters() const {
  std::vector<double> p;
  if (const auto* t = std::get_if<Tabulated1d>(&v_)) return t->values();
  Matrix K;
  Vector b;
  affine_parts(K, b);
  for (int i = 0; i < dim_; ++i)
    for (int k = 0; k < dim_; ++k) p.push_back(K(i, k));
  if (std::holds_alternative<AffineMap>(v_))
    for (int i = 0; i < dim_; ++i) p.push_back(b[i]);
  return p;
}

MappingK MappingK::with_parameters(const std::vector<double>& params) const {
  if (params.size() != parameters().size())
    throw Error(ErrorCode::DimensionMismatch, "parameter count differs from the map family");
  if (const auto* t = std::get_if<Tabulated1d>(&v_)) return MappingK(Tabulated1d(t->knots(), params));
  Matrix K(dim_, dim_);
  for (int i = 0; i < dim_; ++i)
    for (int k = 0; k < dim_; ++k) K(i, k) = params[i * dim_ + k];
  if (std::holds_alternative<LinearMap>(v_)) return MappingK(LinearMap{K});
  Vector b(dim_);
  for (int i = 0; i < dim_; ++i) b[i] = params[dim_ * dim_ + i];
  return MappingK(AffineMap{K, b});
}

MappingK MappingK::perturbed(const MappingK& direction, double eps) const {
  if (direction.v_.index() != v_.index() || direction.dim_ != dim_)
    throw Error(ErrorCode::DimensionMismatch, "perturbation direction must be of the same map family");
  if (const auto* t = std::get_if<Tabulated1d>(&v_)) {
    if (std::get<Tabulated1d>(direction.v_).knots() != t->knots())
      throw Error(ErrorCode::DimensionMismatch, "perturbation direction uses different knots");
  }
  auto p = parameters();
  const auto d = direction.parameters();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += eps * d[i];
  return with_parameters(p);
}

bool MappingK::affine_parts(Matrix& K, Vector& b) const {
  if (const auto* m = std::get_if<LinearMap>(&v_)) {
    K = m->K;
    b = Vector::Zero(dim_);
    return true;
  }
  if (const auto* m = std::get_if<AffineMap>(&v_)) {
    K = m->K;
    b = m->b;
    return true;
  }
  return false;
}

bool MappingK::operator==(const MappingK& other) const {
  if (v_.index() != other.v_.index() || dim_ != other.dim_) return false;
  if (const auto* t = std::get_if<Tabulated1d>(&v_)) return *t == std::get<Tabulated1d>(other.v_);
  return parameters() == other.parameters();
}

// ---------------------------------------------------------------------------
// Certification

HomeoReport check_homeomorphism(const MappingK& K, const Ensemble& ensemble, int max_samples) {
  HomeoReport rep;
  const int n = K.dim();
  if (ensemble.n_paths() == 0 || ensemble.dim() != n) return rep;
  const long points = ensemble.pairs.front().grid.n_points();
  const long total = points * ensemble.n_paths();
  const long stride = std::max<long>(1, (total + max_samples - 1) / std::max(1, max_samples));

  std::vector<Vector> xs, ys, images;
  for (long idx = 0; idx < total; idx += stride) {
    const auto& pair = ensemble.pairs[idx / points];
    const int k = static_cast<int>(idx % points);
    xs.push_back(pair.x_vec(k));
    ys.push_back(pair.y_vec(k));
    images.push_back(K.apply(xs.back()));
  }
  rep.n_samples = static_cast<int>(xs.size());

  rep.domain_lo = Vector::Constant(n, std::numeric_limits<double>::infinity());
  rep.domain_hi = -rep.domain_lo;
  Vector img_lo = rep.domain_lo, img_hi = rep.domain_hi;
  double smin = std::numeric_limits<double>::infinity(), smax = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    rep.domain_lo = rep.domain_lo.cwiseMin(xs[i]);
    rep.domain_hi = rep.domain_hi.cwiseMax(xs[i]);
    img_lo = img_lo.cwiseMin(images[i]);
    img_hi = img_hi.cwiseMax(images[i]);
    Eigen::JacobiSVD<Matrix> svd(K.jacobian(xs[i]));
    const auto& s = svd.singularValues();
    smin = std::min(smin, s[s.size() - 1]);
    smax = std::max(smax, s[0]);
  }
  rep.min_jacobian_singular_value = smin;
  rep.condition_number = std::isinf(K.condition_number()) || smin == 0.0
                             ? std::numeric_limits<double>::max()
                             : std::max(K.condition_number(), smax / smin);

  bool pairwise_ok = true;
  for (std::size_t i = 0; i < xs.size() && pairwise_ok; ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j)
      if ((xs[i] - xs[j]).norm() > 1e-6 && (images[i] - images[j]).norm() <= 1e-9) {
        pairwise_ok = false;
        break;
      }
  const bool structurally_injective =
      std::holds_alternative<Tabulated1d>(K.variant())
          ? std::get<Tabulated1d>(K.variant()).is_monotone()
          : smin > 1e-12 * std::max(smax, 1.0);
  rep.is_injective_on_sample = pairwise_ok && structurally_injective;

  int inside = 0;
  for (const Vector& y : ys) {
    bool in = true;
    for (int i = 0; i < n; ++i) in = in && y[i] >= img_lo[i] && y[i] <= img_hi[i];
    inside += in;
  }
  rep.image_hull_coverage = ys.empty() ? 0.0 : static_cast<double>(inside) / ys.size();
  return rep;
}

void write_knots_csv(std::ostream& out, const Tabulated1d& map) {
  out << "x,value\n";
  char buf[80];
  for (std::size_t i = 0; i < map.knots().size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", map.knots()[i], map.values()[i]);
    out << buf;
  }
}

Tabulated1d read_knots_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("x,value", 0) != 0)
    throw Error(ErrorCode::ParseError, "knot file must start with the header x,value");
  std::vector<double> xs, vs;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      if (comma == std::string::npos) throw std::invalid_argument("no comma");
      xs.push_back(std::stod(line.substr(0, comma)));
      vs.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw Error(ErrorCode::ParseError, "bad knot row on line " + std::to_string(line_no));
    }
  }
  return Tabulated1d(std::move(xs), std::move(vs));
}

}  // namespace simil
