#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

#include "patchguard/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <xmmintrin.h>
#endif

namespace patchguard::simd {

namespace {

Isa probe() {
#if defined(__x86_64__) || defined(_M_X64)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::Avx2;
#elif defined(__aarch64__)
  return Isa::Neon;
#endif
  return Isa::Scalar;
}

Isa initial() {
  const char* env = std::getenv("PATCHGUARD_SIMD");
  if (env && std::string(env) == "scalar") return Isa::Scalar;
  return probe();
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial()};
  return isa;
}

float* workspace(std::size_t floats) {
  thread_local std::vector<float> buf;
  if (buf.size() < floats) buf.resize(floats);
  return buf.data();
}

}  // namespace

Isa detected_isa() {
  static const Isa isa = probe();
  return isa;
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

bool isa_supported(Isa isa) {
  if (isa == Isa::Scalar) return true;
  return isa == detected_isa();
}

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) throw std::invalid_argument("instruction set not supported: " + std::string(isa_name(isa)));
  current().store(isa, std::memory_order_relaxed);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar: return "scalar";
    case Isa::Avx2: return "avx2";
    case Isa::Neon: return "neon";
  }
  return "scalar";
}

FlushDenormals::FlushDenormals() {
#if defined(__x86_64__) || defined(_M_X64)
  saved_ = _mm_getcsr();
  _mm_setcsr(static_cast<unsigned>(saved_) | 0x8040u);  // FTZ | DAZ
#elif defined(__aarch64__)
  unsigned long long fpcr;
  __asm__ volatile("mrs %0, fpcr" : "=r"(fpcr));
  saved_ = fpcr;
  __asm__ volatile("msr fpcr, %0" : : "r"(fpcr | (1ull << 24)));
#endif
}

FlushDenormals::~FlushDenormals() {
#if defined(__x86_64__) || defined(_M_X64)
  _mm_setcsr(static_cast<unsigned>(saved_));
#elif defined(__aarch64__)
  __asm__ volatile("msr fpcr, %0" : : "r"(saved_));
#endif
}

std::size_t gemm_workspace_size(std::size_t m, std::size_t n, std::size_t k) {
  return (n + 15) / 16 * 16 * k + m * k;
}

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a, std::size_t lda,
          const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc) {
  switch (active_isa()) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::Avx2:
      avx2::gemm_f32(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc, workspace(gemm_workspace_size(m, n, k)));
      return;
#endif
#if defined(__aarch64__)
    case Isa::Neon:
      neon::gemm_f32(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc, workspace(gemm_workspace_size(m, n, k)));
      return;
#endif
    default: scalar::gemm_f32(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
  }
}

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc) {
  scalar::gemm_f64(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

float dot(const float* x, const float* y, std::size_t n) {
  switch (active_isa()) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::Avx2: return avx2::dot_f32(x, y, n);
#endif
#if defined(__aarch64__)
    case Isa::Neon: return neon::dot_f32(x, y, n);
#endif
    default: return scalar::dot_f32(x, y, n);
  }
}

double dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy(std::size_t n, float a, const float* x, float* y) {
  switch (active_isa()) {
#if defined(__x86_64__) || defined(_M_X64)
    case Isa::Avx2: avx2::axpy_f32(n, a, x, y); return;
#endif
#if defined(__aarch64__)
    case Isa::Neon: neon::axpy_f32(n, a, x, y); return;
#endif
    default: scalar::axpy_f32(n, a, x, y);
  }
}

void axpy(std::size_t n, double a, const double* x, double* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace patchguard::simd
