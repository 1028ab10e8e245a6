#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "simil/errors.hpp"
#include "simil/mapping.hpp"

using namespace simil;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(v.size());
  int i = 0;
  for (double e : v) out[i++] = e;
  return out;
}

MappingK tabulate(double lo, double hi, int knots, double (*f)(double)) {
  std::vector<double> xs, ys;
  for (int i = 0; i < knots; ++i) {
    xs.push_back(lo + (hi - lo) * i / (knots - 1));
    ys.push_back(f(xs.back()));
  }
  return MappingK::tabulated(xs, ys);
}

Ensemble small_ensemble(int n) {
  EnsembleConfig cfg;
  cfg.sys_x = SdeSystem::linear(-Matrix::Identity(n, n), Matrix::Identity(n, n));
  cfg.sys_y = cfg.sys_x;
  cfg.x0 = Vector::Ones(n);
  cfg.y0 = Vector::Ones(n);
  cfg.grid = TimeGrid(1.0, 50);
  cfg.n_paths = 20;
  return simulate_ensemble(cfg);
}

}  // namespace

TEST(Mapping, ApplyLinearAndAffine) {
  EXPECT_EQ(MappingK::identity(2).apply(vec({3, -1})), vec({3, -1}));
  EXPECT_EQ(MappingK::linear(Matrix::Constant(1, 1, 0.5)).apply(vec({4})), vec({2}));
  EXPECT_EQ(MappingK::affine(Matrix::Identity(2, 2), vec({1, 0})).apply(vec({0, 0})), vec({1, 0}));
  EXPECT_THROW(MappingK::identity(2).apply(vec({1})), Error);
}

TEST(Mapping, JacobianOfLinearIsConstant) {
  Matrix K(2, 2);
  K << 1, 2, 3, 4;
  auto m = MappingK::linear(K);
  EXPECT_EQ(m.jacobian(vec({0, 0})), K);
  EXPECT_EQ(m.jacobian(vec({5, -7})), K);
}

TEST(Mapping, TabulatedIdentityDerivative) {
  auto m = tabulate(-2.0, 2.0, 21, [](double x) { return x; });
  for (double x : {-1.93, -0.5, 0.0, 0.77, 1.999}) {
    EXPECT_NEAR(m.jacobian(vec({x}))(0, 0), 1.0, 1e-8);
    EXPECT_NEAR(m.apply(vec({x}))[0], x, 1e-14);
  }
}

TEST(Mapping, TabulatedSquareDerivative) {
  auto m = tabulate(1.0, 2.0, 101, [](double x) { return x * x; });
  EXPECT_NEAR(m.jacobian(vec({1.5}))(0, 0), 3.0, 1e-3);
}

TEST(Mapping, TabulatedExtrapolationIsFlagged) {
  auto m = tabulate(0.0, 1.0, 11, [](double x) { return 2 * x; });
  bool flag = false;
  m.apply(vec({0.5}), flag);
  EXPECT_FALSE(flag);
  auto y = m.apply(vec({1.5}), flag);
  EXPECT_TRUE(flag);
  EXPECT_NEAR(y[0], 3.0, 1e-12);
}

TEST(Mapping, InverseRoundTrip) {
  EXPECT_EQ(MappingK::identity(2).inverse_apply(vec({1, 2})), vec({1, 2}));
  EXPECT_NEAR(MappingK::linear(Matrix::Constant(1, 1, 0.5)).inverse_apply(vec({2}))[0], 4.0, 1e-15);

  auto m = tabulate(-1.0, 2.0, 40, [](double x) { return std::exp(x) + x; });
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(std::exp(-1.0) - 1.0, std::exp(2.0) + 2.0);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const double y = u(rng);
    worst = std::max(worst, std::abs(m.apply(m.inverse_apply(vec({y})))[0] - y));
  }
  EXPECT_LE(worst, 1e-8);

  auto dec = tabulate(0.0, 1.0, 5, [](double x) { return -x * x * x - x; });
  const double x = dec.inverse_apply(vec({-1.0}))[0];
  EXPECT_NEAR(dec.apply(vec({x}))[0], -1.0, 1e-10);
  // Real root of x^3 + x - 1; five knots leave a visible interpolation error.
  EXPECT_NEAR(x, 0.6823278038280193, 2e-3);
}

TEST(Mapping, SingularMapsRefuseInversion) {
  Matrix K = Matrix::Zero(2, 2);
  K(1, 1) = 1;
  EXPECT_THROW(MappingK::linear(K).inverse_apply(vec({1, 1})), Error);
  auto bump = MappingK::tabulated({0, 1, 2}, {0, 1, 0});
  EXPECT_FALSE(std::get<Tabulated1d>(bump.variant()).is_monotone());
  EXPECT_THROW(bump.inverse_apply(vec({0.5})), Error);
  EXPECT_FALSE(bump.is_admissible());
}

TEST(Mapping, MonotoneDataGiveMonotoneInterpolant) {
  auto m = MappingK::tabulated({0, 1, 2, 3, 4}, {0, 0.1, 3, 3.05, 10});
  double prev = -1e9;
  for (int i = 0; i <= 4000; ++i) {
    const double y = m.apply(vec({i * 1e-3}))[0];
    EXPECT_GT(y, prev);
    prev = y;
  }
}

TEST(Mapping, ParametersRoundTrip) {
  auto a = MappingK::affine(Matrix::Identity(2, 2) * 3.0, vec({1, -1}));
  EXPECT_EQ(a.with_parameters(a.parameters()), a);
  auto d = MappingK::affine(Matrix::Identity(2, 2), vec({0, 1}));
  auto p = a.perturbed(d, 0.5);
  EXPECT_DOUBLE_EQ(p.parameters()[0], 3.5);
  EXPECT_DOUBLE_EQ(p.parameters()[5], -0.5);
  EXPECT_THROW(a.perturbed(MappingK::identity(2), 0.1), Error);
}

TEST(Homeomorphism, IdentityIsInjective) {
  auto rep = check_homeomorphism(MappingK::identity(2), small_ensemble(2));
  EXPECT_TRUE(rep.is_injective_on_sample);
  EXPECT_DOUBLE_EQ(rep.min_jacobian_singular_value, 1.0);
  EXPECT_DOUBLE_EQ(rep.image_hull_coverage, 1.0);
  EXPECT_GT(rep.n_samples, 100);
}

TEST(Homeomorphism, ZeroRowIsReported) {
  Matrix K = Matrix::Identity(2, 2);
  K.row(0).setZero();
  auto rep = check_homeomorphism(MappingK::linear(K), small_ensemble(2));
  EXPECT_FALSE(rep.is_injective_on_sample);
  EXPECT_EQ(rep.min_jacobian_singular_value, 0.0);
}

TEST(Homeomorphism, MonotoneTabulationIsInjective) {
  auto m = tabulate(-5.0, 5.0, 50, [](double x) { return x + 0.1 * x * x * x; });
  auto rep = check_homeomorphism(m, small_ensemble(1));
  EXPECT_TRUE(rep.is_injective_on_sample);
  EXPECT_GT(rep.min_jacobian_singular_value, 0.0);
}

TEST(Mapping, KnotCsvRoundTrip) {
  auto m = tabulate(0.0, 1.0, 7, [](double x) { return std::sin(x); });
  std::stringstream ss;
  write_knots_csv(ss, std::get<Tabulated1d>(m.variant()));
  EXPECT_EQ(MappingK(read_knots_csv(ss)), m);
}
