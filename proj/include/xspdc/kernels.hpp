#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace xspdc {

/// Frame-level inner loops. Every variant produces bit-identical output to the
/// scalar reference.
struct KernelTable {
  const char* name;

  /// out = raw * inv, or -1 where inv == 0 (masked).
  void (*correct)(const std::uint16_t* raw, const float* inv, float* out, std::size_t n);

  /// Writes indices i with v[i] > threshold in increasing order; returns the count.
  std::size_t (*above_threshold)(const float* v, float threshold, std::uint32_t* idx, std::size_t n);

  /// out = saturate_u16(round_half_even(charge * gain + noise)).
  void (*render_adu)(const float* charge, const float* gain, const float* noise, std::uint16_t* out, std::size_t n);
};

const KernelTable& scalar_kernels();
/// Null when the variant is not compiled in or the CPU lacks it.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

/// Best available table. XSPDC_ISA=scalar|avx2|neon in the environment
/// forces a variant (falls back to scalar if unavailable).
const KernelTable& kernels();

std::vector<const KernelTable*> available_kernels();

}  // namespace xspdc
