#include <atomic>

#include "hypermae/kernels.hpp"

namespace hypermae::kernels {

namespace {

CpuFeatures detect() {
  CpuFeatures f;
#if defined(__x86_64__) || defined(_M_X64)
  f.avx2 = __builtin_cpu_supports("avx2");
  f.fma = __builtin_cpu_supports("fma");
  f.f16c = __builtin_cpu_supports("f16c");
#endif
  return f;
}

std::atomic<bool> g_force_scalar{false};

inline bool use_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
  const CpuFeatures& f = cpu_features();
  return !g_force_scalar.load(std::memory_order_relaxed) && f.avx2 && f.fma;
#else
  return false;
#endif
}

inline bool use_f16c() {
#if defined(__x86_64__) || defined(_M_X64)
  const CpuFeatures& f = cpu_features();
  return !g_force_scalar.load(std::memory_order_relaxed) && f.avx2 && f.f16c;
#else
  return false;
#endif
}

}  // namespace

const CpuFeatures& cpu_features() {
  static const CpuFeatures f = detect();
  return f;
}

void set_force_scalar(bool on) { g_force_scalar.store(on, std::memory_order_relaxed); }
bool force_scalar() { return g_force_scalar.load(std::memory_order_relaxed); }
const char* active_isa() { return use_avx2() ? "avx2" : "scalar"; }

void gemm_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
#if defined(__x86_64__) || defined(_M_X64)
  if (use_avx2()) {
    avx2::gemm_f32(a, b, c, m, k, n, trans_a, trans_b, accumulate);
    return;
  }
#endif
  ref::gemm_f32(a, b, c, m, k, n, trans_a, trans_b, accumulate);
}

void gemm_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
  // f64 is the verification path: always the serial reference kernel
  ref::gemm_f64(a, b, c, m, k, n, trans_a, trans_b, accumulate);
}

#if defined(__x86_64__) || defined(_M_X64)
#define HM_DISPATCH(fn, ...)         \
  if (use_avx2()) {                  \
    return avx2::fn(__VA_ARGS__);    \
  }                                  \
  return ref::fn(__VA_ARGS__)
#else
#define HM_DISPATCH(fn, ...) return ref::fn(__VA_ARGS__)
#endif

void vadd_f32(const float* a, const float* b, float* out, std::size_t n) {
  HM_DISPATCH(vadd_f32, a, b, out, n);
}
void vsub_f32(const float* a, const float* b, float* out, std::size_t n) {
  HM_DISPATCH(vsub_f32, a, b, out, n);
}
void vmul_f32(const float* a, const float* b, float* out, std::size_t n) {
  HM_DISPATCH(vmul_f32, a, b, out, n);
}
void vaxpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  HM_DISPATCH(vaxpy_f32, alpha, x, y, n);
}
float vsum_f32(const float* x, std::size_t n) { HM_DISPATCH(vsum_f32, x, n); }
float vdot_f32(const float* a, const float* b, std::size_t n) { HM_DISPATCH(vdot_f32, a, b, n); }

#undef HM_DISPATCH

void f32_to_f16_n(const float* src, std::uint16_t* dst, std::size_t n) {
#if defined(__x86_64__) || defined(_M_X64)
  if (use_f16c()) {
    avx2::f32_to_f16_n(src, dst, n);
    return;
  }
#endif
  ref::f32_to_f16_n(src, dst, n);
}

void f16_to_f32_n(const std::uint16_t* src, float* dst, std::size_t n) {
#if defined(__x86_64__) || defined(_M_X64)
  if (use_f16c()) {
    avx2::f16_to_f32_n(src, dst, n);
    return;
  }
#endif
  ref::f16_to_f32_n(src, dst, n);
}

}  // namespace hypermae::kernels
