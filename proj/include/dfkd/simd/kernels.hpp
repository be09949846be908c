#pragma once

// Dense double-precision kernels behind the tensor ops.
//
// Every kernel has a scalar reference implementation; vectorized variants
// (AVX2+FMA on x86-64, NEON on AArch64) are selected once at startup from the
// CPU feature bits. DFKD_SIMD=scalar|avx2|neon|auto overrides the choice.

#include <cstddef>
#include <string_view>
#include <vector>

namespace dfkd::simd {

enum class Isa { scalar, avx2, neon };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;

  // sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // out[i] = alpha * x[i]
  void (*scale)(double alpha, const double* x, double* out, std::size_t n);
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*sub)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*abs_sum)(const double* x, std::size_t n);

  // Row-major C[m x n] = op(A) * op(B), op(X) = X or X^T.
  // A is stored m x k (k x m when trans_a); B is k x n (n x k when trans_b).
  // C is overwritten.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const double* a,
               bool trans_a, const double* b, bool trans_b, double* c);
};

const KernelTable& scalar_kernels();

// Null when the ISA was not compiled into this build.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

bool cpu_supports(Isa isa);

// Tables that are both compiled in and runnable on this CPU.
std::vector<const KernelTable*> available_kernels();

// The process-wide table used by tensor ops.
const KernelTable& active();

}  // namespace dfkd::simd
