#include <cstdlib>
#include <string_view>

#include "xspdc/kernels.hpp"

namespace xspdc {

#if !defined(XSPDC_HAVE_AVX2)
const KernelTable* avx2_kernels() { return nullptr; }
#endif
#if !defined(XSPDC_HAVE_NEON)
const KernelTable* neon_kernels() { return nullptr; }
#endif

std::vector<const KernelTable*> available_kernels() {
  std::vector<const KernelTable*> out{&scalar_kernels()};
  if (const auto* t = avx2_kernels()) out.push_back(t);
  if (const auto* t = neon_kernels()) out.push_back(t);
  return out;
}

namespace {

const KernelTable& select() {
  const char* forced = std::getenv("XSPDC_ISA");
  if (forced != nullptr) {
    const std::string_view want(forced);
    for (const auto* t : available_kernels()) {
      if (want == t->name) return *t;
    }
    return scalar_kernels();
  }
  if (const auto* t = avx2_kernels()) return *t;
  if (const auto* t = neon_kernels()) return *t;
  return scalar_kernels();
}

}  // namespace

const KernelTable& kernels() {
  static const KernelTable& chosen = select();
  return chosen;
}

}  // namespace xspdc
