#include "snf/kernels.hpp"

namespace snf::kernels {
namespace {

template <typename T>
T dot_scalar(const T* x, const T* y, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <typename T>
void axpy_scalar(T a, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
void gemm_nn_scalar(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      axpy_scalar(av, b + p * n, crow, n);
    }
  }
}

template <typename T>
void gemm_nt_scalar(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      c[i * n + j] += dot_scalar(a + i * k, b + j * k, k);
}

template <typename T>
void gemm_tn_scalar(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      if (av == T(0)) continue;
      axpy_scalar(av, brow, c + i * n, n);
    }
  }
}

template <typename T>
const KernelTable<T> kTable{"scalar", &dot_scalar<T>, &axpy_scalar<T>,
                            &gemm_nn_scalar<T>, &gemm_nt_scalar<T>,
                            &gemm_tn_scalar<T>};

}  // namespace

template <>
const KernelTable<float>& scalar<float>() {
  return kTable<float>;
}
template <>
const KernelTable<double>& scalar<double>() {
  return kTable<double>;
}

}  // namespace snf::kernels
