#include <immintrin.h>

#include <cmath>

#include "xspdc/kernels.hpp"

namespace xspdc {

namespace {

void correct_avx2(const std::uint16_t* raw, const float* inv, float* out, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  const __m256 sentinel = _mm256_set1_ps(-1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m128i r16 = _mm_loadu_si128(reinterpret_cast<const __m128i*>(raw + i));
    const __m256 r = _mm256_cvtepi32_ps(_mm256_cvtepu16_epi32(r16));
    const __m256 g = _mm256_loadu_ps(inv + i);
    const __m256 masked = _mm256_cmp_ps(g, zero, _CMP_EQ_OQ);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(_mm256_mul_ps(r, g), sentinel, masked));
  }
  for (; i < n; ++i) out[i] = inv[i] == 0.0f ? -1.0f : static_cast<float>(raw[i]) * inv[i];
}

std::size_t above_threshold_avx2(const float* v, float threshold, std::uint32_t* idx, std::size_t n) {
  const __m256 t = _mm256_set1_ps(threshold);
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    unsigned bits = static_cast<unsigned>(_mm256_movemask_ps(_mm256_cmp_ps(_mm256_loadu_ps(v + i), t, _CMP_GT_OQ)));
    while (bits) {
      idx[count++] = static_cast<std::uint32_t>(i + __builtin_ctz(bits));
      bits &= bits - 1;
    }
  }
  for (; i < n; ++i) {
    if (v[i] > threshold) idx[count++] = static_cast<std::uint32_t>(i);
  }
  return count;
}

void render_adu_avx2(const float* charge, const float* gain, const float* noise, std::uint16_t* out,
                     std::size_t n) {
  const __m256 lo = _mm256_setzero_ps();
  const __m256 hi = _mm256_set1_ps(65535.0f);
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    __m256 a = _mm256_add_ps(_mm256_mul_ps(_mm256_loadu_ps(charge + i), _mm256_loadu_ps(gain + i)),
                             _mm256_loadu_ps(noise + i));
    __m256 b = _mm256_add_ps(_mm256_mul_ps(_mm256_loadu_ps(charge + i + 8), _mm256_loadu_ps(gain + i + 8)),
                             _mm256_loadu_ps(noise + i + 8));
    a = _mm256_min_ps(_mm256_max_ps(a, lo), hi);
    b = _mm256_min_ps(_mm256_max_ps(b, lo), hi);
    const __m256i ia = _mm256_cvtps_epi32(a);  // round to nearest even
    const __m256i ib = _mm256_cvtps_epi32(b);
    const __m256i packed = _mm256_permute4x64_epi64(_mm256_packus_epi32(ia, ib), 0xD8);
    _mm256_storeu_si256(reinterpret_cast<__m256i*>(out + i), packed);
  }
  for (; i < n; ++i) {
    float v = charge[i] * gain[i];
    v = v + noise[i];
    v = std::fmax(v, 0.0f);
    v = std::fmin(v, 65535.0f);
    out[i] = static_cast<std::uint16_t>(std::nearbyintf(v));
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{"avx2", correct_avx2, above_threshold_avx2, render_adu_avx2};
  return __builtin_cpu_supports("avx2") ? &table : nullptr;
}

}  // namespace xspdc
