#include <cstdlib>
#include <string_view>

#include "snf/kernels.hpp"

namespace snf::kernels {

bool cpu_has_avx2() {
#if defined(SNF_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  static const bool has = [] {
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  }();
  return has;
#else
  return false;
#endif
}

namespace {

bool scalar_forced() {
  const char* env = std::getenv("SNF_KERNELS");
  return env != nullptr && std::string_view(env) == "scalar";
}

template <typename T>
const KernelTable<T>& pick() {
  if (!scalar_forced())
    if (const auto* simd = avx2<T>()) return *simd;
  return scalar<T>();
}

}  // namespace

template <>
const KernelTable<float>& active<float>() {
  static const KernelTable<float>& table = pick<float>();
  return table;
}
template <>
const KernelTable<double>& active<double>() {
  static const KernelTable<double>& table = pick<double>();
  return table;
}

}  // namespace snf::kernels
