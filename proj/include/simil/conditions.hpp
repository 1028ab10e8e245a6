#pragma once

// Empirical probes of the structural hypotheses: dissipation of the difference
// process, Lyapunov spectra of linear cocycles, and coercivity, growth and Lipschitz constants.

#include "simil/mapping.hpp"
#include "simil/sde_core.hpp"

#include <cstdint>
#include <vector>

namespace simil {

struct DissipationReport {
  double alpha1_hat = 0.0;
  double regression_r2 = 0.0;
  double fraction_violating = 0.0;
  int samples_used = 0;
};

/// LHS = 2<J_K f - g, Kx - y> + |J_K sigma - varsigma|_F^2 regressed through the
/// origin on |Kx - y|^2 over (t, path) points. Throws DegenerateSamples when more
/// than 99% of the points have |Kx - y|^2 < 1e-14.
DissipationReport dissipation_report(const Ensemble& ensemble, const MappingK& K,
                                     int max_samples = 200000);

struct DecayCheck {
  bool no_signal = false;  // defect identically below 1e-14
  double slope = 0.0;      // of log E|Kx - y|^2 over [T/2, T]
  double alpha1_hat = 0.0;
  bool dissipation_holds = false;  // alpha1_hat > 0 and at most 1% violations
  /// slope <= -0.8 alpha1_hat while the dissipation inequality holds.
  bool consistent = false;
};

DecayCheck decay_rate_check(const Ensemble& ensemble, const MappingK& K);

struct LyapunovOptions {
  double horizon = 200.0;
  double dt = 0.01;
  int n_seeds = 16;
  std::uint64_t seed = 0;
  double envelope_eps = 0.1;
};

struct LyapunovSpectrum {
  std::vector<double> exponents;  // merged, strictly decreasing
  std::vector<int> multiplicities;
  /// Per-index seed averages before merging, decreasing, with t-based 95% half-widths.
  std::vector<double> raw_exponents;
  std::vector<double> raw_ci;
  double horizon_used = 0.0;
  double ci_halfwidth = 0.0;
  int n_seeds = 0;
  /// Tempered envelope: max over t and seeds of |Phi(t)| e^{-(lambda_1 + eps) t}.
  double envelope_M = 0.0;
  double envelope_eps = 0.0;
};

/// Discrete QR method on the one-step flow exp((A0 - 1/2 sum A_l^2) dt + sum A_l dW_l).
/// The drift must be linear; the diffusion state-linear or constant zero.
/// Throws HorizonTooShort when ci_halfwidth > 0.1 max(1, |lambda_1|).
LyapunovSpectrum lyapunov_spectrum(const SdeSystem& cocycle, const LyapunovOptions& options = {});

/// Merges sorted exponents whose gaps are within 2 ci (1e-9 when ci is zero).
void merge_exponents(LyapunovSpectrum& spec);

enum class AsymptoticPrediction { Holds, FailsWithPositiveMismatch, Inconclusive };
const char* prediction_name(AsymptoticPrediction p);

AsymptoticPrediction asymptotic_similarity_prediction(const LyapunovSpectrum& x, const LyapunovSpectrum& y);

struct AssumptionProbe {
  double c1_hat = 0.0;  // monotonicity
  double c2_hat = 0.0;  // coercivity slope
  double M1_hat = 0.0;  // coercivity offset
  double L_hat = 0.0;   // Lipschitz
  int n_samples = 0;
  double radius = 0.0;
};

/// Maximises the defining ratios over random pairs in the ball of `radius`;
/// the results are lower bounds on the true constants. Needs n_samples >= 1000.
AssumptionProbe assumption_probe(const SdeSystem& system, int n_samples, double radius,
                                 std::uint64_t seed = 0);

/// Student t quantile t_{0.975, df}.
double t_quantile_975(int df);

}  // namespace simil
