#include <algorithm>
#include <bit>
#include <cstring>

#include "hypermae/kernels.hpp"

namespace hypermae::kernels::ref {

namespace {

template <class T>
void gemm_impl(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
               bool trans_a, bool trans_b, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  auto a_at = [&](std::size_t i, std::size_t kk) { return trans_a ? a[kk * m + i] : a[i * k + kk]; };
  if (!trans_b) {
    // c[i,:] += a(i,kk) * b[kk,:]
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T av = a_at(i, kk);
        const T* brow = b + kk * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    // b stored n x k: c[i,j] += dot(a(i,:), b[j,:])
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T* brow = b + j * k;
        T acc = 0;
        for (std::size_t kk = 0; kk < k; ++kk) acc += a_at(i, kk) * brow[kk];
        crow[j] += acc;
      }
    }
  }
}

}  // namespace

void gemm_f32(const float* a, const float* b, float* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
  gemm_impl(a, b, c, m, k, n, trans_a, trans_b, accumulate);
}

void gemm_f64(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b, bool accumulate) {
  gemm_impl(a, b, c, m, k, n, trans_a, trans_b, accumulate);
}

void vadd_f32(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void vsub_f32(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void vmul_f32(const float* a, const float* b, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void vaxpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

float vsum_f32(const float* x, std::size_t n) {
  float s = 0.f;
  for (std::size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

float vdot_f32(const float* a, const float* b, std::size_t n) {
  float s = 0.f;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

std::uint16_t f32_to_f16(float v) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(v);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  std::uint32_t mant = x & 0x007fffffu;
  const std::uint32_t exp8 = (x >> 23) & 0xffu;
  if (exp8 == 0xffu) {  // inf / nan
    if (mant == 0) return static_cast<std::uint16_t>(sign | 0x7c00u);
    std::uint32_t payload = mant >> 13;
    return static_cast<std::uint16_t>(sign | 0x7c00u | 0x0200u | payload);
  }
  const std::int32_t exp = static_cast<std::int32_t>(exp8) - 127 + 15;
  if (exp >= 0x1f) return static_cast<std::uint16_t>(sign | 0x7c00u);  // overflow -> inf
  if (exp <= 0) {
    // subnormal half or zero
    if (exp < -10) return static_cast<std::uint16_t>(sign);
    mant |= 0x00800000u;  // implicit leading bit
    const std::uint32_t shift = static_cast<std::uint32_t>(14 - exp);
    std::uint32_t half = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
  }
  std::uint16_t h =
      static_cast<std::uint16_t>(sign | (static_cast<std::uint32_t>(exp) << 10) | (mant >> 13));
  const std::uint32_t rem = mant & 0x1fffu;
  // round to nearest even; a carry out of the mantissa bumps the exponent,
  // which is exactly the right behaviour (including overflow to inf)
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;
  return h;
}

float f16_to_f32(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  const std::uint32_t mant = h & 0x3ffu;
  std::uint32_t out;
  if (exp == 0) {
    if (mant == 0) {
      out = sign;
    } else {
      // normalize subnormal: value = mant * 2^-24
      std::uint32_t m = mant;
      int s = 0;
      while (!(m & 0x400u)) {
        m <<= 1;
        ++s;
      }
      out = sign | (static_cast<std::uint32_t>(113 - s) << 23) | ((m & 0x3ffu) << 13);
    }
  } else if (exp == 0x1fu) {
    out = sign | 0x7f800000u | (mant << 13);
  } else {
    out = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  return std::bit_cast<float>(out);
}

void f32_to_f16_n(const float* src, std::uint16_t* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = f32_to_f16(src[i]);
}

void f16_to_f32_n(const std::uint16_t* src, float* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = f16_to_f32(src[i]);
}

}  // namespace hypermae::kernels::ref
