#pragma once

// Data-parallel inner loops with a scalar reference and an AVX2 variant,
// selected at runtime. Both variants perform the same IEEE operations in the
// same order, so their results agree bit for bit.

#include <cstddef>

namespace simil::kernels {

enum class Isa { Scalar, Avx2 };

const char* isa_name(Isa isa);

/// Best variant the running CPU supports. SIMIL_FORCE_SCALAR=1 pins Scalar.
Isa detected_isa();
Isa active_isa();
/// Throws Error(InvalidArgument) if the CPU cannot run `isa`.
void set_active_isa(Isa isa);

/// Coefficients of one system with drift A*arg (+ a) and constant diffusion B.
/// Matrices are row-major; `offset` may be null.
struct LinearStepCoeffs {
  int n = 0;
  int d = 0;
  const double* A = nullptr;
  const double* offset = nullptr;
  const double* B = nullptr;
  bool partner = false;  // drift argument is the other system's state
};

/// One Euler-Maruyama step for `lanes` independent paths in SoA layout:
/// component i of lane j lives at [i * lanes + j], noise channel l at [l * lanes + j].
/// `scratch` must hold 2 * n * lanes doubles.
using EmStepFn = void (*)(const LinearStepCoeffs& cx, const LinearStepCoeffs& cy, double dt,
                          std::size_t lanes, const double* dw, double* x, double* y,
                          double* scratch);

/// out[p] = |K x_p + b - y_p|^2 for `count` points stored AoS with stride n.
using SqDefectFn = void (*)(int n, const double* K, const double* b, const double* x,
                            const double* y, std::size_t count, double* out);

namespace scalar {
void em_step_linear(const LinearStepCoeffs& cx, const LinearStepCoeffs& cy, double dt,
                    std::size_t lanes, const double* dw, double* x, double* y, double* scratch);
void sq_defect_linear(int n, const double* K, const double* b, const double* x, const double* y,
                      std::size_t count, double* out);
}  // namespace scalar

namespace avx2 {
bool compiled() noexcept;
void em_step_linear(const LinearStepCoeffs& cx, const LinearStepCoeffs& cy, double dt,
                    std::size_t lanes, const double* dw, double* x, double* y, double* scratch);
void sq_defect_linear(int n, const double* K, const double* b, const double* x, const double* y,
                      std::size_t count, double* out);
}  // namespace avx2

/// Dispatching entry points.
void em_step_linear(const LinearStepCoeffs& cx, const LinearStepCoeffs& cy, double dt,
                    std::size_t lanes, const double* dw, double* x, double* y, double* scratch);
void sq_defect_linear(int n, const double* K, const double* b, const double* x, const double* y,
                      std::size_t count, double* out);

/// Lane count the batched simulator uses for the active variant.
std::size_t preferred_lanes();

}  // namespace simil::kernels
