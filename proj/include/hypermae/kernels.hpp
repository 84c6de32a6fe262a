#pragma once

// Dense inner-loop kernels. Every kernel has a scalar reference implementation
// (namespace ref) and, on x86-64, an AVX2 variant selected at runtime. The f64
// entry points always run the scalar reference path: the double-precision
// gradient-check path must stay serial-deterministic.

#include <cstddef>
#include <cstdint>

namespace hypermae::kernels {

struct CpuFeatures {
  bool avx2 = false;
  bool fma = false;
  bool f16c = false;
};

const CpuFeatures& cpu_features();

// Route all dispatched calls to the scalar reference kernels (used by the
// equivalence tests and by the --force-scalar CLI switch).
void set_force_scalar(bool on);
bool force_scalar();
const char* active_isa();  // "avx2" or "scalar"

// Row-major single-slice GEMM:  c[m x n] (+)= op(a) * op(b).
// trans_a: a is stored k x m and read transposed; trans_b: b is stored n x k.
// With accumulate=false the output is overwritten, otherwise added into.
void gemm_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b, bool accumulate);
void gemm_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b, bool accumulate);

void vadd_f32(const float* a, const float* b, float* out, std::size_t n);
void vsub_f32(const float* a, const float* b, float* out, std::size_t n);
void vmul_f32(const float* a, const float* b, float* out, std::size_t n);
void vaxpy_f32(float alpha, const float* x, float* y, std::size_t n);  // y += alpha*x
float vsum_f32(const float* x, std::size_t n);
float vdot_f32(const float* a, const float* b, std::size_t n);

// fp16 storage conversion (IEEE binary16, round-to-nearest-even on encode).
void f32_to_f16_n(const float* src, std::uint16_t* dst, std::size_t n);
void f16_to_f32_n(const std::uint16_t* src, float* dst, std::size_t n);

namespace ref {

void gemm_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b, bool accumulate);
void gemm_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b, bool accumulate);

void vadd_f32(const float* a, const float* b, float* out, std::size_t n);
void vsub_f32(const float* a, const float* b, float* out, std::size_t n);
void vmul_f32(const float* a, const float* b, float* out, std::size_t n);
void vaxpy_f32(float alpha, const float* x, float* y, std::size_t n);
float vsum_f32(const float* x, std::size_t n);
float vdot_f32(const float* a, const float* b, std::size_t n);

std::uint16_t f32_to_f16(float v);
float f16_to_f32(std::uint16_t h);
void f32_to_f16_n(const float* src, std::uint16_t* dst, std::size_t n);
void f16_to_f32_n(const std::uint16_t* src, float* dst, std::size_t n);

}  // namespace ref

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {

void gemm_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b, bool accumulate);
void vadd_f32(const float* a, const float* b, float* out, std::size_t n);
void vsub_f32(const float* a, const float* b, float* out, std::size_t n);
void vmul_f32(const float* a, const float* b, float* out, std::size_t n);
void vaxpy_f32(float alpha, const float* x, float* y, std::size_t n);
float vsum_f32(const float* x, std::size_t n);
float vdot_f32(const float* a, const float* b, std::size_t n);
void f32_to_f16_n(const float* src, std::uint16_t* dst, std::size_t n);
void f16_to_f32_n(const std::uint16_t* src, float* dst, std::size_t n);

}  // namespace avx2
#endif

}  // namespace hypermae::kernels
