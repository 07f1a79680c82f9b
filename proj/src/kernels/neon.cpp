#include <arm_neon.h>

#include <cmath>

#include "xspdc/kernels.hpp"

namespace xspdc {

namespace {

void correct_neon(const std::uint16_t* raw, const float* inv, float* out, std::size_t n) {
  const float32x4_t sentinel = vdupq_n_f32(-1.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const float32x4_t r = vcvtq_f32_u32(vmovl_u16(vld1_u16(raw + i)));
    const float32x4_t g = vld1q_f32(inv + i);
    const uint32x4_t masked = vceqzq_f32(g);
    vst1q_f32(out + i, vbslq_f32(masked, sentinel, vmulq_f32(r, g)));
  }
  for (; i < n; ++i) out[i] = inv[i] == 0.0f ? -1.0f : static_cast<float>(raw[i]) * inv[i];
}

std::size_t above_threshold_neon(const float* v, float threshold, std::uint32_t* idx, std::size_t n) {
  const float32x4_t t = vdupq_n_f32(threshold);
  std::size_t count = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const uint32x4_t gt = vcgtq_f32(vld1q_f32(v + i), t);
    if (vmaxvq_u32(gt) == 0) continue;
    for (std::size_t k = 0; k < 4; ++k) {
      if (v[i + k] > threshold) idx[count++] = static_cast<std::uint32_t>(i + k);
    }
  }
  for (; i < n; ++i) {
    if (v[i] > threshold) idx[count++] = static_cast<std::uint32_t>(i);
  }
  return count;
}

void render_adu_neon(const float* charge, const float* gain, const float* noise, std::uint16_t* out,
                     std::size_t n) {
  const float32x4_t lo = vdupq_n_f32(0.0f);
  const float32x4_t hi = vdupq_n_f32(65535.0f);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    float32x4_t a = vaddq_f32(vmulq_f32(vld1q_f32(charge + i), vld1q_f32(gain + i)), vld1q_f32(noise + i));
    a = vminq_f32(vmaxq_f32(a, lo), hi);
    vst1_u16(out + i, vmovn_u32(vcvtnq_u32_f32(a)));
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

const KernelTable* neon_kernels() {
  static const KernelTable table{"neon", correct_neon, above_threshold_neon, render_adu_neon};
  return &table;
}

}  // namespace xspdc
