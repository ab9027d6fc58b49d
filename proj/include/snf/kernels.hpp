#pragma once
// Dense arithmetic kernels with a scalar reference and SIMD variants.
//
// All matrices are row-major and contiguous. The gemm kernels accumulate
// into C (C += ...); callers zero C first when they want an assignment.
// The active variant is chosen once per process: AVX2+FMA when the CPU
// supports it, unless SNF_KERNELS=scalar is set in the environment.

#include <cstddef>
#include <string_view>

namespace snf::kernels {

template <typename T>
struct KernelTable {
  std::string_view name;
  // sum_i x[i] * y[i]
  T (*dot)(const T* x, const T* y, std::size_t n);
  // y += a * x
  void (*axpy)(T a, const T* x, T* y, std::size_t n);
  // C[MxN] += A[MxK] * B[KxN]
  void (*gemm_nn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                  std::size_t n);
  // C[MxN] += A[MxK] * B[NxK]^T
  void (*gemm_nt)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                  std::size_t n);
  // C[MxN] += A[KxM]^T * B[KxN]
  void (*gemm_tn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                  std::size_t n);
};

template <typename T>
const KernelTable<T>& scalar();

// nullptr when the binary or the CPU lacks AVX2+FMA.
template <typename T>
const KernelTable<T>* avx2();

template <typename T>
const KernelTable<T>& active();

bool cpu_has_avx2();

}  // namespace snf::kernels
