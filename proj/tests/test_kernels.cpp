#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <vector>

#include "xspdc/kernels.hpp"

using namespace xspdc;

namespace {

// Lengths that exercise full vectors plus every tail size.
const std::size_t kLengths[] = {0, 1, 3, 7, 8, 9, 15, 16, 17, 31, 33, 1000, 34848};

bool same_bits(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("scalar reference behaviour") {
  const auto& k = scalar_kernels();
  const std::uint16_t raw[] = {100, 200, 65535};
  const float inv[] = {0.5f, 0.0f, 1.0f};
  float out[3];
  k.correct(raw, inv, out, 3);
  CHECK(out[0] == 50.0f);
  CHECK(out[1] == -1.0f);
  CHECK(out[2] == 65535.0f);

  const float v[] = {1.0f, 5.0f, 5.0f, 5.0001f, -2.0f, 9.0f};
  std::uint32_t idx[6];
  const auto n = k.above_threshold(v, 5.0f, idx, 6);
  REQUIRE(n == 2);
  CHECK(idx[0] == 3);
  CHECK(idx[1] == 5);

  const float charge[] = {2.5f, 3.5f, -10.0f, 1e6f, 0.5f, 1.5f};
  const float gain[] = {1.0f, 1.0f, 1.0f, 1.0f, 1.0f, 1.0f};
  const float noise[] = {0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f};
  std::uint16_t adu[6];
  k.render_adu(charge, gain, noise, adu, 6);
  CHECK(adu[0] == 2);  // half to even
  CHECK(adu[1] == 4);
  CHECK(adu[2] == 0);
  CHECK(adu[3] == 65535);
  CHECK(adu[4] == 0);
  CHECK(adu[5] == 2);
}

TEST_CASE("dispatch picks an available table") {
  const auto all = available_kernels();
  REQUIRE_FALSE(all.empty());
  CHECK(std::string(all.front()->name) == "scalar");
  bool found = false;
  for (const auto* t : all) found = found || t == &kernels();
  CHECK(found);
}

TEST_CASE("vector variants match the scalar reference bit for bit") {
  const auto& ref = scalar_kernels();
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> adu(0, 65535);
  std::uniform_real_distribution<float> u(0.0f, 2.0f);
  std::normal_distribution<float> nrm(0.0f, 50.0f);

  for (const auto* t : available_kernels()) {
    CAPTURE(t->name);
    for (std::size_t n : kLengths) {
      CAPTURE(n);
      std::vector<std::uint16_t> raw(n);
      std::vector<float> inv(n), charge(n), gain(n), noise(n);
      for (std::size_t i = 0; i < n; ++i) {
        raw[i] = static_cast<std::uint16_t>(adu(rng));
        inv[i] = (i % 11 == 0) ? 0.0f : u(rng);
        // Exact halves, negatives and values past saturation.
        switch (i % 5) {
          case 0: charge[i] = static_cast<float>(adu(rng) % 200) + 0.5f; break;
          case 1: charge[i] = -u(rng) * 100.0f; break;
          case 2: charge[i] = 70000.0f + u(rng); break;
          default: charge[i] = u(rng) * 3000.0f;
        }
        gain[i] = i % 5 == 0 ? 1.0f : 0.9f + 0.1f * u(rng);
        noise[i] = i % 5 == 0 ? 0.0f : nrm(rng);
      }

      std::vector<float> a(n), b(n);
      ref.correct(raw.data(), inv.data(), a.data(), n);
      t->correct(raw.data(), inv.data(), b.data(), n);
      CHECK(same_bits(a, b));

      std::vector<std::uint32_t> ia(n + 1), ib(n + 1);
      for (float thr : {-0.5f, 0.0f, 100.0f, 60000.0f}) {
        const auto ca = ref.above_threshold(a.data(), thr, ia.data(), n);
        const auto cb = t->above_threshold(a.data(), thr, ib.data(), n);
        REQUIRE(ca == cb);
        CHECK(std::equal(ia.begin(), ia.begin() + static_cast<std::ptrdiff_t>(ca), ib.begin()));
      }

      std::vector<std::uint16_t> ra(n), rb(n);
      ref.render_adu(charge.data(), gain.data(), noise.data(), ra.data(), n);
      t->render_adu(charge.data(), gain.data(), noise.data(), rb.data(), n);
      CHECK(ra == rb);
    }
  }
}

TEST_CASE("threshold ignores NaN and masked sentinels") {
  for (const auto* t : available_kernels()) {
    CAPTURE(t->name);
    std::vector<float> v(20, -1.0f);
    v[3] = std::numeric_limits<float>::quiet_NaN();
    v[9] = 4.0f;
    v[19] = std::numeric_limits<float>::infinity();
    std::vector<std::uint32_t> idx(20);
    const auto c = t->above_threshold(v.data(), 0.0f, idx.data(), v.size());
    REQUIRE(c == 2);
    CHECK(idx[0] == 9);
    CHECK(idx[1] == 19);
  }
}
