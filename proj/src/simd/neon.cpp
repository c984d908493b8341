#include "patchguard/simd/kernels.hpp"

#if defined(__aarch64__)
#include <arm_neon.h>

namespace patchguard::simd::neon {

namespace {

constexpr std::size_t kStrip = 16;
constexpr std::size_t kRows = 4;

inline std::size_t round_up(std::size_t v, std::size_t q) { return (v + q - 1) / q * q; }

void pack_b(bool tb, std::size_t n, std::size_t k, const float* b, std::size_t ldb, float* out) {
  const std::size_t strips = round_up(n, kStrip) / kStrip;
  for (std::size_t s = 0; s < strips; ++s) {
    float* dst = out + s * k * kStrip;
    const std::size_t j0 = s * kStrip;
    const std::size_t cols = n - j0 < kStrip ? n - j0 : kStrip;
    for (std::size_t p = 0; p < k; ++p) {
      float* d = dst + p * kStrip;
      for (std::size_t j = 0; j < cols; ++j) d[j] = tb ? b[(j0 + j) * ldb + p] : b[p * ldb + j0 + j];
      for (std::size_t j = cols; j < kStrip; ++j) d[j] = 0.0f;
    }
  }
}

template <int R>
inline void micro_kernel(const float* a, std::size_t lda, const float* bp, std::size_t k, float* c, std::size_t ldc,
                         std::size_t cols, float alpha) {
  float32x4_t acc[R][4];
  for (int r = 0; r < R; ++r)
    for (int q = 0; q < 4; ++q) acc[r][q] = vdupq_n_f32(0.0f);
  for (std::size_t p = 0; p < k; ++p) {
    const float* row = bp + p * kStrip;
    const float32x4_t b0 = vld1q_f32(row);
    const float32x4_t b1 = vld1q_f32(row + 4);
    const float32x4_t b2 = vld1q_f32(row + 8);
    const float32x4_t b3 = vld1q_f32(row + 12);
    for (int r = 0; r < R; ++r) {
      const float av = a[r * lda + p];
      acc[r][0] = vfmaq_n_f32(acc[r][0], b0, av);
      acc[r][1] = vfmaq_n_f32(acc[r][1], b1, av);
      acc[r][2] = vfmaq_n_f32(acc[r][2], b2, av);
      acc[r][3] = vfmaq_n_f32(acc[r][3], b3, av);
    }
  }
  for (int r = 0; r < R; ++r) {
    float tmp[kStrip];
    for (int q = 0; q < 4; ++q) vst1q_f32(tmp + 4 * q, acc[r][q]);
    float* crow = c + r * ldc;
    for (std::size_t j = 0; j < cols; ++j) crow[j] += alpha * tmp[j];
  }
}

}  // namespace

void gemm_f32(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
              std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc, float* packed) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    for (std::size_t j = 0; j < n; ++j) crow[j] = beta == 0.0f ? 0.0f : crow[j] * beta;
  }
  if (m == 0 || n == 0 || k == 0 || alpha == 0.0f) return;
  pack_b(tb, n, k, b, ldb, packed);
  const float* ap = a;
  std::size_t ap_ld = lda;
  if (ta) {
    float* dst = packed + round_up(n, kStrip) * k;
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t p = 0; p < k; ++p) dst[i * k + p] = a[p * lda + i];
    ap = dst;
    ap_ld = k;
  }
  const std::size_t strips = round_up(n, kStrip) / kStrip;
  for (std::size_t s = 0; s < strips; ++s) {
    const std::size_t j0 = s * kStrip;
    const std::size_t cols = n - j0 < kStrip ? n - j0 : kStrip;
    const float* strip = packed + s * k * kStrip;
    for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
      const std::size_t rows = m - i0 < kRows ? m - i0 : kRows;
      const float* arow = ap + i0 * ap_ld;
      float* crow = c + i0 * ldc + j0;
      switch (rows) {
        case 4: micro_kernel<4>(arow, ap_ld, strip, k, crow, ldc, cols, alpha); break;
        case 3: micro_kernel<3>(arow, ap_ld, strip, k, crow, ldc, cols, alpha); break;
        case 2: micro_kernel<2>(arow, ap_ld, strip, k, crow, ldc, cols, alpha); break;
        default: micro_kernel<1>(arow, ap_ld, strip, k, crow, ldc, cols, alpha); break;
      }
    }
  }
}

float dot_f32(const float* x, const float* y, std::size_t n) {
  float32x4_t s = vdupq_n_f32(0.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) s = vfmaq_f32(s, vld1q_f32(x + i), vld1q_f32(y + i));
  float acc = vaddvq_f32(s);
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_f32(std::size_t n, float a, const float* x, float* y) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) vst1q_f32(y + i, vfmaq_n_f32(vld1q_f32(y + i), vld1q_f32(x + i), a));
  for (; i < n; ++i) y[i] += a * x[i];
}

}  // namespace patchguard::simd::neon
#endif
