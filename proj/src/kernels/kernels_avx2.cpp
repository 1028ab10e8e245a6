#include "simil/kernels.hpp"

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace simil::kernels::avx2 {

#if defined(__AVX2__)

namespace {

// Four lanes at once; same operation order as the scalar reference.
void step_one_system(const LinearStepCoeffs& c, __m256d vdt, std::size_t lanes, std::size_t j,
                     const double* dw, const double* own, const double* partner, double* out) {
  const double* arg = c.partner ? partner : own;
  for (int i = 0; i < c.n; ++i) {
    __m256d acc = _mm256_setzero_pd();
    for (int k = 0; k < c.n; ++k) {
      __m256d a = _mm256_set1_pd(c.A[i * c.n + k]);
      acc = _mm256_add_pd(acc, _mm256_mul_pd(a, _mm256_loadu_pd(arg + k * lanes + j)));
    }
    if (c.offset != nullptr) acc = _mm256_add_pd(acc, _mm256_set1_pd(c.offset[i]));
    __m256d noise = _mm256_setzero_pd();
    for (int l = 0; l < c.d; ++l) {
      __m256d b = _mm256_set1_pd(c.B[i * c.d + l]);
      noise = _mm256_add_pd(noise, _mm256_mul_pd(b, _mm256_loadu_pd(dw + l * lanes + j)));
    }
    __m256d next = _mm256_add_pd(_mm256_loadu_pd(own + i * lanes + j), _mm256_mul_pd(acc, vdt));
    _mm256_storeu_pd(out + i * lanes + j, _mm256_add_pd(next, noise));
  }
}

}  // namespace

bool compiled() noexcept { return true; }

void em_step_linear(const LinearStepCoeffs& cx, const LinearStepCoeffs& cy, double dt,
                    std::size_t lanes, const double* dw, double* x, double* y, double* scratch) {
  const std::size_t n = static_cast<std::size_t>(cx.n);
  double* x_next = scratch;
  double* y_next = scratch + n * lanes;
  const __m256d vdt = _mm256_set1_pd(dt);
  std::size_t j = 0;
  for (; j + 4 <= lanes; j += 4) {
    step_one_system(cx, vdt, lanes, j, dw, x, y, x_next);
    step_one_system(cy, vdt, lanes, j, dw, y, x, y_next);
  }
  if (j < lanes) {
    // Tail lanes go through the reference loop on a strided view.
    for (; j < lanes; ++j) {
      for (int pass = 0; pass < 2; ++pass) {
        const LinearStepCoeffs& c = pass == 0 ? cx : cy;
        const double* own = pass == 0 ? x : y;
        const double* other = pass == 0 ? y : x;
        double* out = pass == 0 ? x_next : y_next;
        const double* arg = c.partner ? other : own;
        for (int i = 0; i < c.n; ++i) {
          double acc = 0.0;
          for (int k = 0; k < c.n; ++k) acc += c.A[i * c.n + k] * arg[k * lanes + j];
          if (c.offset != nullptr) acc += c.offset[i];
          double noise = 0.0;
          for (int l = 0; l < c.d; ++l) noise += c.B[i * c.d + l] * dw[l * lanes + j];
          double next = own[i * lanes + j] + acc * dt;
          out[i * lanes + j] = next + noise;
        }
      }
    }
  }
  for (std::size_t e = 0; e < n * lanes; ++e) {
    x[e] = x_next[e];
    y[e] = y_next[e];
  }
}

void sq_defect_linear(int n, const double* K, const double* b, const double* x, const double* y,
                      std::size_t count, double* out) {
  std::size_t p = 0;
  if (n == 1) {
    const __m256d k = _mm256_set1_pd(K[0]);
    const __m256d off = b != nullptr ? _mm256_set1_pd(b[0]) : _mm256_setzero_pd();
    for (; p + 4 <= count; p += 4) {
      __m256d r = _mm256_add_pd(_mm256_setzero_pd(), _mm256_mul_pd(k, _mm256_loadu_pd(x + p)));
      if (b != nullptr) r = _mm256_add_pd(r, off);
      r = _mm256_sub_pd(r, _mm256_loadu_pd(y + p));
      _mm256_storeu_pd(out + p, _mm256_add_pd(_mm256_setzero_pd(), _mm256_mul_pd(r, r)));
    }
  } else {
    const __m256i stride = _mm256_set_epi64x(3LL * n, 2LL * n, 1LL * n, 0LL);
    for (; p + 4 <= count; p += 4) {
      const double* xp = x + p * n;
      const double* yp = y + p * n;
      __m256d sum = _mm256_setzero_pd();
      for (int i = 0; i < n; ++i) {
        __m256d r = _mm256_setzero_pd();
        for (int k = 0; k < n; ++k) {
          __m256d xv = _mm256_i64gather_pd(xp + k, stride, 8);
          r = _mm256_add_pd(r, _mm256_mul_pd(_mm256_set1_pd(K[i * n + k]), xv));
        }
        if (b != nullptr) r = _mm256_add_pd(r, _mm256_set1_pd(b[i]));
        r = _mm256_sub_pd(r, _mm256_i64gather_pd(yp + i, stride, 8));
        sum = _mm256_add_pd(sum, _mm256_mul_pd(r, r));
      }
      _mm256_storeu_pd(out + p, sum);
    }
  }
  if (p < count) scalar::sq_defect_linear(n, K, b, x + p * n, y + p * n, count - p, out + p);
}

#else

bool compiled() noexcept { return false; }

void em_step_linear(const LinearStepCoeffs& cx, const LinearStepCoeffs& cy, double dt,
                    std::size_t lanes, const double* dw, double* x, double* y, double* scratch) {
  scalar::em_step_linear(cx, cy, dt, lanes, dw, x, y, scratch);
}

void sq_defect_linear(int n, const double* K, const double* b, const double* x, const double* y,
                      std::size_t count, double* out) {
  scalar::sq_defect_linear(n, K, b, x, y, count, out);
}

#endif

}  // namespace simil::kernels::avx2
