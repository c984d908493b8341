#pragma once

#include <cstddef>
#include <string_view>

namespace patchguard::simd {

enum class Isa { Scalar, Avx2, Neon };

/// Best instruction set this process can run.
Isa detected_isa();
/// Instruction set used by the dispatching entry points. Starts at
/// detected_isa() unless PATCHGUARD_SIMD=scalar is set in the environment.
Isa active_isa();
/// Overrides the active kernel set; throws std::invalid_argument if the CPU
/// lacks support. Not thread-safe against concurrent kernel calls.
void set_active_isa(Isa isa);
std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);

/// C[M×N] = alpha · op(A) · op(B) + beta · C, row-major. op(A) is M×K,
/// op(B) is K×N. With beta == 0, C is overwritten (NaNs in C are ignored).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
          std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc);

/// Float64 path; always the scalar reference (used for gradient checks).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc);

float dot(const float* x, const float* y, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);

/// y += a · x
void axpy(std::size_t n, float a, const float* x, float* y);
void axpy(std::size_t n, double a, const double* x, double* y);

// Per-ISA entry points, exposed for equivalence tests and benchmarks.
namespace scalar {
void gemm_f32(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
              std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc);
void gemm_f64(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha, const double* a,
              std::size_t lda, const double* b, std::size_t ldb, double beta, double* c, std::size_t ldc);
float dot_f32(const float* x, const float* y, std::size_t n);
void axpy_f32(std::size_t n, float a, const float* x, float* y);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
/// `packed` must hold at least round_up(n,16)·k + m·k floats.
void gemm_f32(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
              std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc, float* packed);
float dot_f32(const float* x, const float* y, std::size_t n);
void axpy_f32(std::size_t n, float a, const float* x, float* y);
}  // namespace avx2
#endif

#if defined(__aarch64__)
namespace neon {
void gemm_f32(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, float alpha, const float* a,
              std::size_t lda, const float* b, std::size_t ldb, float beta, float* c, std::size_t ldc, float* packed);
float dot_f32(const float* x, const float* y, std::size_t n);
void axpy_f32(std::size_t n, float a, const float* x, float* y);
}  // namespace neon
#endif

/// Flushes subnormal floats to zero on the calling thread while alive.
/// Tiny late-training gradients otherwise hit the slow subnormal path.
class FlushDenormals {
 public:
  FlushDenormals();
  ~FlushDenormals();
  FlushDenormals(const FlushDenormals&) = delete;
  FlushDenormals& operator=(const FlushDenormals&) = delete;

 private:
  unsigned long long saved_ = 0;
};

/// Floats of scratch the vector gemm paths need.
std::size_t gemm_workspace_size(std::size_t m, std::size_t n, std::size_t k);

}  // namespace patchguard::simd
