// Compiled with -mavx2 -mfma. Only reached after the dispatcher has checked
// CPU support. Keep standard-library templates out of this unit so no
// AVX-encoded copies of shared inline functions leak into the link.
#include "patchguard/simd/kernels.hpp"

#include <immintrin.h>

namespace patchguard::simd::avx2 {

namespace {

constexpr std::size_t kStrip = 16;
constexpr std::size_t kRows = 6;
constexpr std::size_t kDepth = 256;

inline std::size_t round_up(std::size_t v, std::size_t q) { return (v + q - 1) / q * q; }

// Packs rows [p0, p0+kc) of op(B) (K×N) into 16-column strips laid out
// [strip][kc][16], zero padded.
void pack_b(bool tb, std::size_t n, std::size_t p0, std::size_t kc, const float* b, std::size_t ldb, float* out) {
  const std::size_t strips = round_up(n, kStrip) / kStrip;
  for (std::size_t s = 0; s < strips; ++s) {
    float* dst = out + s * kc * kStrip;
    const std::size_t j0 = s * kStrip;
    const std::size_t cols = n - j0 < kStrip ? n - j0 : kStrip;
    if (!tb) {
      for (std::size_t p = 0; p < kc; ++p) {
        const float* src = b + (p0 + p) * ldb + j0;
        float* d = dst + p * kStrip;
        if (cols == kStrip) {
          _mm256_storeu_ps(d, _mm256_loadu_ps(src));
          _mm256_storeu_ps(d + 8, _mm256_loadu_ps(src + 8));
        } else {
          for (std::size_t j = 0; j < cols; ++j) d[j] = src[j];
          for (std::size_t j = cols; j < kStrip; ++j) d[j] = 0.0f;
        }
      }
    } else {
      // Walk each source row contiguously; op(B) columns are rows of B.
      for (std::size_t j = 0; j < cols; ++j) {
        const float* src = b + (j0 + j) * ldb + p0;
        for (std::size_t p = 0; p < kc; ++p) dst[p * kStrip + j] = src[p];
      }
      for (std::size_t j = cols; j < kStrip; ++j)
        for (std::size_t p = 0; p < kc; ++p) dst[p * kStrip + j] = 0.0f;
    }
  }
}

template <int R>
inline void micro_kernel(const float* a, std::size_t lda, const float* bp, std::size_t k, float* c, std::size_t ldc,
                         std::size_t cols, float alpha) {
  __m256 acc0[R];
  __m256 acc1[R];
#pragma GCC unroll 6
  for (int r = 0; r < R; ++r) {
    acc0[r] = _mm256_setzero_ps();
    acc1[r] = _mm256_setzero_ps();
  }
  for (std::size_t p = 0; p < k; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp + p * kStrip);
    const __m256 b1 = _mm256_loadu_ps(bp + p * kStrip + 8);
#pragma GCC unroll 6
    for (int r = 0; r < R; ++r) {
      const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
      acc0[r] = _mm256_fmadd_ps(av, b0, acc0[r]);
      acc1[r] = _mm256_fmadd_ps(av, b1, acc1[r]);
    }
  }
  const __m256 va = _mm256_set1_ps(alpha);
#pragma GCC unroll 6
  for (int r = 0; r < R; ++r) {
    float* crow = c + r * ldc;
    if (cols == kStrip) {
      _mm256_storeu_ps(crow, _mm256_fmadd_ps(va, acc0[r], _mm256_loadu_ps(crow)));
      _mm256_storeu_ps(crow + 8, _mm256_fmadd_ps(va, acc1[r], _mm256_loadu_ps(crow + 8)));
    } else {
      alignas(32) float tmp[kStrip];
      _mm256_store_ps(tmp, acc0[r]);
      _mm256_store_ps(tmp + 8, acc1[r]);
      for (std::size_t j = 0; j < cols; ++j) crow[j] += alpha * tmp[j];
    }
  }
}

void run_rows(std::size_t rows, const float* a, std::size_t lda, const float* bp, std::size_t k, float* c,
              std::size_t ldc, std::size_t cols, float alpha) {
  switch (rows) {
    case 6: micro_kernel<6>(a, lda, bp, k, c, ldc, cols, alpha); break;
    case 5: micro_kernel<5>(a, lda, bp, k, c, ldc, cols, alpha); break;
    case 4: micro_kernel<4>(a, lda, bp, k, c, ldc, cols, alpha); break;
    case 3: micro_kernel<3>(a, lda, bp, k, c, ldc, cols, alpha); break;
    case 2: micro_kernel<2>(a, lda, bp, k, c, ldc, cols, alpha); break;
    default: micro_kernel<1>(a, lda, bp, k, c, ldc, cols, alpha); break;
  }
}

}  // namespace

void gemm_f32(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
              std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc, float* packed) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    if (beta == 0.0f) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0f;
    } else if (beta != 1.0f) {
      for (std::size_t j = 0; j < n; ++j) crow[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0f) return;

  // Transposed A goes after the B panel area (sized for the whole of K).
  const float* ap = a;
  std::size_t ap_ld = lda;
  if (ta) {
    float* dst = packed + round_up(n, kStrip) * k;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) dst[i * k + p] = a[p * lda + i];
    ap = dst;
    ap_ld = k;
  }

  // K is split into panels so a packed strip stays cache resident across the
  // row blocks of A.
  const std::size_t strips = round_up(n, kStrip) / kStrip;
  for (std::size_t p0 = 0; p0 < k; p0 += kDepth) {
    const std::size_t kc = k - p0 < kDepth ? k - p0 : kDepth;
    pack_b(tb, n, p0, kc, b, ldb, packed);
    for (std::size_t s = 0; s < strips; ++s) {
      const std::size_t j0 = s * kStrip;
      const std::size_t cols = n - j0 < kStrip ? n - j0 : kStrip;
      const float* strip = packed + s * kc * kStrip;
      for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
        const std::size_t rows = m - i0 < kRows ? m - i0 : kRows;
        run_rows(rows, ap + i0 * ap_ld + p0, ap_ld, strip, kc, c + i0 * ldc + j0, ldc, cols, alpha);
      }
    }
  }
}

float dot_f32(const float* x, const float* y, std::size_t n) {
  __m256 s0 = _mm256_setzero_ps();
  __m256 s1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), s1);
  }
  for (; i + 8 <= n; i += 8) s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
  s0 = _mm256_add_ps(s0, s1);
  __m128 lo = _mm_add_ps(_mm256_castps256_ps128(s0), _mm256_extractf128_ps(s0, 1));
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  float acc = _mm_cvtss_f32(lo);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_f32(std::size_t n, float a, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(a);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += a * x[i];
}

}  // namespace patchguard::simd::avx2
