#include <gtest/gtest.h>

#include <cmath>

#include "simil/conditions.hpp"
#include "simil/errors.hpp"

using namespace simil;

namespace {

Matrix m1(double v) { return Matrix::Constant(1, 1, v); }
Vector v1(double v) { return Vector::Constant(1, v); }

Ensemble scalar_pair(double a, double b, double c, double d, double x0, double y0, double T = 5.0,
                     int steps = 500, int paths = 50) {
  EnsembleConfig cfg;
  cfg.sys_x = SdeSystem::linear(m1(a), m1(b));
  cfg.sys_y = SdeSystem::linear(m1(c), m1(d));
  cfg.x0 = v1(x0);
  cfg.y0 = v1(y0);
  cfg.grid = TimeGrid(T, steps);
  cfg.n_paths = paths;
  return simulate_ensemble(cfg);
}

SdeSystem geometric(double a, double b) {
  return SdeSystem(LinearDrift{m1(a)}, LinearInStateDiffusion{{m1(b)}});
}

LyapunovSpectrum manual_spectrum(std::vector<double> raw, double ci) {
  LyapunovSpectrum s;
  s.raw_exponents = std::move(raw);
  s.raw_ci.assign(s.raw_exponents.size(), ci);
  s.ci_halfwidth = ci;
  merge_exponents(s);
  return s;
}

}  // namespace

TEST(Dissipation, DeterministicContraction) {
  auto rep = dissipation_report(scalar_pair(-1, 0, -1, 0, 1, 0), MappingK::identity(1));
  EXPECT_NEAR(rep.alpha1_hat, 2.0, 1e-12);
  EXPECT_EQ(rep.fraction_violating, 0.0);
  EXPECT_NEAR(rep.regression_r2, 1.0, 1e-12);
}

TEST(Dissipation, SharedNoiseCancels) {
  auto rep = dissipation_report(scalar_pair(-1, 1, -1, 1, 1, 0), MappingK::identity(1));
  EXPECT_NEAR(rep.alpha1_hat, 2.0, 0.1);
}

TEST(Dissipation, ExpandingDynamicsHaveNoRate) {
  auto rep = dissipation_report(scalar_pair(1, 0, 1, 0, 1, 0.5, 2.0, 200), MappingK::identity(1));
  EXPECT_EQ(rep.alpha1_hat, 0.0);
  EXPECT_GT(rep.fraction_violating, 0.99);
}

TEST(Dissipation, IdenticalPathsAreDegenerate) {
  try {
    dissipation_report(scalar_pair(-1, 1, -1, 1, 1, 1), MappingK::identity(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateSamples);
  }
}

TEST(DecayRate, ContractingPair) {
  auto chk = decay_rate_check(scalar_pair(-1, 1, -1, 1, 1, 0, 10.0, 1000), MappingK::identity(1));
  EXPECT_NEAR(chk.slope, -2.0, 0.2);
  EXPECT_TRUE(chk.dissipation_holds);
  EXPECT_TRUE(chk.consistent);
}

TEST(DecayRate, IdenticalPathsGiveNoSignal) {
  EXPECT_TRUE(decay_rate_check(scalar_pair(-1, 1, -1, 1, 1, 1), MappingK::identity(1)).no_signal);
}

TEST(DecayRate, ExpandingPairIsInconsistent) {
  auto chk = decay_rate_check(scalar_pair(1, 0, 1, 0, 1, 0.5, 2.0, 200), MappingK::identity(1));
  EXPECT_GT(chk.slope, 0.0);
  EXPECT_FALSE(chk.consistent);
}

TEST(Lyapunov, GeometricScalarClosedForm) {
  LyapunovOptions opt;
  opt.horizon = 200;
  auto spec = lyapunov_spectrum(geometric(-1, 1), opt);
  ASSERT_EQ(spec.exponents.size(), 1u);
  EXPECT_NEAR(spec.exponents[0], -1.5, 0.05);
  EXPECT_EQ(spec.multiplicities[0], 1);
  EXPECT_EQ(spec.n_seeds, 16);
}

TEST(Lyapunov, CommutingScalarMatchesCocycleExponent) {
  // Phi(t) = exp((a - b^2/2) t + b W_t), so each seed's exponent is a - b^2/2 + b W_T / T.
  LyapunovOptions opt;
  opt.horizon = 20;
  opt.n_seeds = 8;
  opt.seed = 42;
  const double a = -0.5, b = 0.4;
  auto spec = lyapunov_spectrum(geometric(a, b), opt);
  const TimeGrid grid(20.0, 2000);
  double mean = 0;
  for (int s = 0; s < 8; ++s) mean += a - b * b / 2 + b * generate_brownian_path(grid, 1, 42, s).w(2000, 0) / 20.0;
  EXPECT_NEAR(spec.raw_exponents[0], mean / 8, 1e-10);
}

TEST(Lyapunov, DeterministicDiagonal) {
  LyapunovOptions opt;
  opt.horizon = 1000;
  Matrix A = Vector(Eigen::Vector2d(-1, -3)).asDiagonal();
  auto spec = lyapunov_spectrum(SdeSystem::linear(A, Matrix::Zero(2, 1)), opt);
  ASSERT_EQ(spec.exponents.size(), 2u);
  EXPECT_NEAR(spec.exponents[0], -1.0, 1e-3);
  EXPECT_NEAR(spec.exponents[1], -3.0, 1e-3);
  EXPECT_EQ(spec.ci_halfwidth, 0.0);
}

TEST(Lyapunov, NonNormalRealPartsOfEigenvalues) {
  Matrix A(2, 2);
  A << -1, 5, 0, -2;
  LyapunovOptions opt;
  opt.horizon = 1000;
  auto spec = lyapunov_spectrum(SdeSystem::linear(A, Matrix::Zero(2, 1)), opt);
  EXPECT_NEAR(spec.exponents[0], -1.0, 1e-3);
  EXPECT_NEAR(spec.exponents[1], -2.0, 1e-3);
}

TEST(Lyapunov, RepeatedExponentsMerge) {
  LyapunovOptions opt;
  opt.horizon = 50;
  auto spec = lyapunov_spectrum(SdeSystem::linear(-Matrix::Identity(2, 2), Matrix::Zero(2, 1)), opt);
  ASSERT_EQ(spec.exponents.size(), 1u);
  EXPECT_EQ(spec.multiplicities[0], 2);
}

TEST(Lyapunov, BasisChangeInvariance) {
  Matrix A0(2, 2), A1(2, 2), P(2, 2);
  A0 << -1.0, 0.3, 0.0, -2.0;
  A1 << 0.4, 0.0, 0.1, 0.2;
  P << 1.0, 1.0, 0.0, 2.0;
  const Matrix Pi = P.inverse();
  LyapunovOptions opt;
  opt.horizon = 200;
  auto s1 = lyapunov_spectrum(SdeSystem(LinearDrift{A0}, LinearInStateDiffusion{{A1}}), opt);
  auto s2 = lyapunov_spectrum(SdeSystem(LinearDrift{P * A0 * Pi}, LinearInStateDiffusion{{P * A1 * Pi}}), opt);
  ASSERT_EQ(s1.raw_exponents.size(), 2u);
  for (int i = 0; i < 2; ++i)
    EXPECT_NEAR(s1.raw_exponents[i], s2.raw_exponents[i], s1.raw_ci[i] + s2.raw_ci[i]);
}

TEST(Lyapunov, ShortHorizonIsRejected) {
  LyapunovOptions opt;
  opt.horizon = 1.0;
  try {
    lyapunov_spectrum(geometric(-1, 2), opt);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::HorizonTooShort);
  }
}

TEST(Lyapunov, AdditiveNoiseIsRejected) {
  EXPECT_THROW(lyapunov_spectrum(SdeSystem::linear(m1(-1), m1(1))), Error);
}

TEST(Lyapunov, TemperedEnvelope) {
  LyapunovOptions opt;
  opt.horizon = 50;
  auto det = lyapunov_spectrum(SdeSystem::linear(m1(-1), m1(0)), opt);
  EXPECT_NEAR(det.envelope_M, 1.0, 1e-12);
  auto noisy = lyapunov_spectrum(geometric(-1, 0.3), opt);
  EXPECT_TRUE(std::isfinite(noisy.envelope_M));
  EXPECT_GE(noisy.envelope_M, 1.0);
}

TEST(Prediction, SettledAndUnsettledCases) {
  auto a = manual_spectrum({-1.0, -2.0}, 0.0);
  EXPECT_EQ(asymptotic_similarity_prediction(a, a), AsymptoticPrediction::Holds);
  EXPECT_EQ(asymptotic_similarity_prediction(manual_spectrum({0.5}, 0.0), manual_spectrum({-0.5}, 0.0)),
            AsymptoticPrediction::FailsWithPositiveMismatch);
  EXPECT_EQ(asymptotic_similarity_prediction(manual_spectrum({-1.0}, 0.0), manual_spectrum({-2.0}, 0.0)),
            AsymptoticPrediction::Inconclusive);
  EXPECT_EQ(asymptotic_similarity_prediction(manual_spectrum({-1.0}, 0.02), manual_spectrum({-1.03}, 0.02)),
            AsymptoticPrediction::Holds);
}

TEST(Probe, LinearDriftLipschitzIsOperatorNorm) {
  Matrix A(2, 2);
  A << -1.0, 2.0, 0.5, -3.0;
  auto p = assumption_probe(SdeSystem::linear(A, Matrix::Identity(2, 2)), 4000, 1.0);
  const double op = Eigen::JacobiSVD<Matrix>(A).singularValues()[0];
  EXPECT_NEAR(p.L_hat, op, 0.05 * op);
  EXPECT_LE(p.L_hat, op * (1 + 1e-12));
}

TEST(Probe, ZeroSystem) {
  auto p = assumption_probe(SdeSystem::linear(m1(0), m1(0)), 1000, 1.0);
  EXPECT_LE(p.c1_hat, 0.0);
  EXPECT_NEAR(p.L_hat, 0.0, 1e-15);
}

TEST(Probe, CubicDrift) {
  SdeSystem s(PolynomialDrift{{Polynomial(1, {{-1.0, {3}}})}}, ConstantDiffusion{m1(0)});
  auto p = assumption_probe(s, 2000, 2.0);
  EXPECT_NEAR(p.L_hat, 12.0, 1.2);
  EXPECT_LE(p.c1_hat, 0.0);
  EXPECT_THROW(assumption_probe(s, 10, 2.0), Error);
}
