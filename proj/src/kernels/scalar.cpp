#include <cmath>

#include "xspdc/kernels.hpp"

namespace xspdc {

namespace {

void correct_scalar(const std::uint16_t* raw, const float* inv, float* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = inv[i] == 0.0f ? -1.0f : static_cast<float>(raw[i]) * inv[i];
}

std::size_t above_threshold_scalar(const float* v, float threshold, std::uint32_t* idx, std::size_t n) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (v[i] > threshold) idx[count++] = static_cast<std::uint32_t>(i);
  }
  return count;
}

void render_adu_scalar(const float* charge, const float* gain, const float* noise, std::uint16_t* out,
                       std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    float v = charge[i] * gain[i];
    v = v + noise[i];
    v = std::fmax(v, 0.0f);
    v = std::fmin(v, 65535.0f);
    out[i] = static_cast<std::uint16_t>(std::nearbyintf(v));
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar", correct_scalar, above_threshold_scalar, render_adu_scalar};
  return table;
}

}  // namespace xspdc
