#include "simil/kernels.hpp"

namespace simil::kernels::scalar {

namespace {

void step_one_system(const LinearStepCoeffs& c, double dt, std::size_t lanes, std::size_t lane,
                     const double* dw, const double* own, const double* partner, double* out) {
  const double* arg = c.partner ? partner : own;
  for (int i = 0; i < c.n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < c.n; ++k) acc += c.A[i * c.n + k] * arg[k * lanes + lane];
    if (c.offset != nullptr) acc += c.offset[i];
    double noise = 0.0;
    for (int l = 0; l < c.d; ++l) noise += c.B[i * c.d + l] * dw[l * lanes + lane];
    double next = own[i * lanes + lane] + acc * dt;
    out[i * lanes + lane] = next + noise;
  }
}

}  // namespace

void em_step_linear(const LinearStepCoeffs& cx, const LinearStepCoeffs& cy, double dt,
                    std::size_t lanes, const double* dw, double* x, double* y, double* scratch) {
  const std::size_t n = static_cast<std::size_t>(cx.n);
  double* x_next = scratch;
  double* y_next = scratch + n * lanes;
  for (std::size_t j = 0; j < lanes; ++j) {
    step_one_system(cx, dt, lanes, j, dw, x, y, x_next);
    step_one_system(cy, dt, lanes, j, dw, y, x, y_next);
  }
  for (std::size_t e = 0; e < n * lanes; ++e) {
    x[e] = x_next[e];
    y[e] = y_next[e];
  }
}

void sq_defect_linear(int n, const double* K, const double* b, const double* x, const double* y,
                      std::size_t count, double* out) {
  for (std::size_t p = 0; p < count; ++p) {
    const double* xp = x + p * n;
    const double* yp = y + p * n;
    double sum = 0.0;
    for (int i = 0; i < n; ++i) {
      double r = 0.0;
      for (int k = 0; k < n; ++k) r += K[i * n + k] * xp[k];
      if (b != nullptr) r += b[i];
      r = r - yp[i];
      sum += r * r;
    }
    out[p] = sum;
  }
}

}  // namespace simil::kernels::scalar
