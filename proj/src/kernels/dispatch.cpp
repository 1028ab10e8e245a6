#include "simil/errors.hpp"
#include "simil/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace simil::kernels {

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return avx2::compiled() && __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

Isa initial_isa() {
  const char* force = std::getenv("SIMIL_FORCE_SCALAR");
  if (force != nullptr && std::strcmp(force, "0") != 0 && force[0] != '\0') return Isa::Scalar;
  return detected_isa();
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
  }
  return "unknown";
}

Isa detected_isa() { return cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar; }

Isa active_isa() { return active().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (isa == Isa::Avx2 && !cpu_has_avx2())
    throw Error(ErrorCode::InvalidArgument, "AVX2 kernels are not available on this CPU");
  active().store(isa, std::memory_order_relaxed);
}

void em_step_linear(const LinearStepCoeffs& cx, const LinearStepCoeffs& cy, double dt,
                    std::size_t lanes, const double* dw, double* x, double* y, double* scratch) {
  if (active_isa() == Isa::Avx2)
    avx2::em_step_linear(cx, cy, dt, lanes, dw, x, y, scratch);
  else
    scalar::em_step_linear(cx, cy, dt, lanes, dw, x, y, scratch);
}

void sq_defect_linear(int n, const double* K, const double* b, const double* x, const double* y,
                      std::size_t count, double* out) {
  if (active_isa() == Isa::Avx2)
    avx2::sq_defect_linear(n, K, b, x, y, count, out);
  else
    scalar::sq_defect_linear(n, K, b, x, y, count, out);
}

std::size_t preferred_lanes() { return active_isa() == Isa::Avx2 ? 8 : 4; }

}  // namespace simil::kernels
