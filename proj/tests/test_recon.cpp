#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "xspdc/error.hpp"
#include "xspdc/recon.hpp"
#include "xspdc/synth.hpp"

using namespace xspdc;

namespace {

constexpr int W = 24;
constexpr int H = 20;

struct Frame {
  std::vector<std::uint16_t> raw = std::vector<std::uint16_t>(W * H, 0);
  void set(int x, int y, int v) { raw[static_cast<std::size_t>(y) * W + x] = static_cast<std::uint16_t>(v); }
};

EventList reconstruct(const Frame& f, const CalibrationSet& cal) {
  FrameReconstructor r(cal);
  EventList out;
  r.process(f.raw.data(), 0, out);
  return out;
}

std::vector<Cluster> clusters(const Frame& f, const CalibrationSet& cal) {
  return extract_clusters(correct_frame(f.raw, W, H, cal), cal);
}

CalibrationSet unit() { return CalibrationSet::identity(W, H, 100.0); }

}  // namespace

TEST_CASE("single pixel photon") {
  Frame f;
  f.set(5, 6, 1050);
  const auto ev = reconstruct(f, unit());
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].x == 5);
  CHECK(ev[0].y == 6);
  CHECK(ev[0].cx == 5.0);
  CHECK(ev[0].energy_kev == 10.5);
  CHECK(ev[0].energy_ev() == 10500);
}

TEST_CASE("threshold is strict") {
  Frame f;
  f.set(5, 6, 10);
  f.set(12, 6, 11);
  const auto ev = reconstruct(f, unit());
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].x == 12);
}

TEST_CASE("topology classes") {
  const auto cal = unit();
  auto topo = [&](std::initializer_list<std::pair<int, int>> px) {
    Frame f;
    for (auto [x, y] : px) f.set(x, y, 300);
    const auto c = clusters(f, cal);
    REQUIRE(c.size() == 1);
    return c[0].topology;
  };
  CHECK(topo({{8, 8}}) == Topology::single);
  CHECK(topo({{8, 8}, {9, 8}}) == Topology::dual);
  CHECK(topo({{8, 8}, {8, 9}}) == Topology::dual);
  CHECK(topo({{8, 8}, {9, 8}, {8, 9}}) == Topology::triple);
  CHECK(topo({{8, 8}, {9, 8}, {10, 8}}) == Topology::rejected);
  CHECK(topo({{8, 8}, {9, 8}, {8, 9}, {9, 9}}) == Topology::quad);
  CHECK(topo({{8, 8}, {9, 8}, {10, 8}, {11, 8}}) == Topology::rejected);
  CHECK(topo({{8, 8}, {9, 8}, {8, 9}, {9, 9}, {10, 9}}) == Topology::rejected);

  auto straight = cal;
  straight.allow_straight_triples = true;
  Frame f;
  f.set(8, 8, 300);
  f.set(9, 8, 300);
  f.set(10, 8, 300);
  CHECK(extract_clusters(correct_frame(f.raw, W, H, straight), straight)[0].topology == Topology::triple);
}

TEST_CASE("diagonal neighbours are separate clusters") {
  Frame f;
  f.set(8, 8, 300);
  f.set(9, 9, 400);
  const auto ev = reconstruct(f, unit());
  CHECK(ev.size() == 2);
}

TEST_CASE("rejected blob takes its halo with it") {
  Frame f;
  // 2x3 blob.
  for (int y = 8; y <= 9; ++y) {
    for (int x = 8; x <= 10; ++x) f.set(x, y, 200);
  }
  f.set(11, 10, 500);  // diagonal to the blob corner: inside the halo
  f.set(13, 10, 700);  // two pixels clear
  const auto c = clusters(f, unit());
  CHECK(c.size() == 3);
  const auto ev = reconstruct(f, unit());
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].x == 13);
  CHECK(ev[0].energy_kev == 7.0);
}

TEST_CASE("charge-weighted centroid and summed energy") {
  Frame f;
  f.set(6, 7, 600);
  f.set(7, 7, 400);
  auto ev = reconstruct(f, unit());
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].cx == doctest::Approx(6.4));
  CHECK(ev[0].cy == 7.0);
  CHECK(ev[0].x == 6);
  CHECK(ev[0].energy_kev == 10.0);

  Frame q;
  q.set(10, 10, 250);
  q.set(11, 10, 250);
  q.set(10, 11, 250);
  q.set(11, 11, 300);
  ev = reconstruct(q, unit());
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].energy_kev == 10.5);
  CHECK(std::fabs(ev[0].cx - (10.0 + 550.0 / 1050.0)) <= 5e-4);
}

TEST_CASE("energy is linear in deposited charge") {
  for (int adu = 200; adu <= 2100; adu += 37) {
    Frame f;
    f.set(9, 9, adu);
    const auto ev = reconstruct(f, unit());
    REQUIRE(ev.size() == 1);
    CHECK(ev[0].energy_ev() == adu * 10);
  }
}

TEST_CASE("gain and transfer loss are inverted") {
  auto cal = unit();
  for (auto& c : cal.cti) c = 1e-3;
  cal.gain[static_cast<std::size_t>(15) * W + 9] = 1.1f;
  Frame f;
  f.set(9, 15, static_cast<int>(std::lround(1050.0 * 1.1 * std::pow(1.0 - 1e-3, 15))));
  const auto ev = reconstruct(f, cal);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].energy_kev == doctest::Approx(10.5).epsilon(1e-3));
}

TEST_CASE("masked pixels never leak into events") {
  auto cal = unit();
  cal.mask = build_exclusion_mask(W, H, line_defects(W, H, {}, {12}), 1);
  CHECK(cal.masked(11, 5));
  CHECK(cal.masked(13, 5));
  CHECK(cal.masked(0, 5));
  CHECK_FALSE(cal.masked(10, 5));
  Frame f;
  f.set(12, 5, 900);   // on the dead column
  f.set(11, 9, 900);   // on its neighbour
  f.set(10, 12, 900);  // next to the masked band: cluster touches it
  f.set(1, 8, 900);    // next to the border
  f.set(6, 8, 900);    // clean
  const auto corrected = correct_frame(f.raw, W, H, cal);
  CHECK(corrected.adu[5 * W + 12] == kIgnoredPixel);
  const auto ev = reconstruct(f, cal);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].x == 6);
  for (const auto& e : ev) CHECK_FALSE(cal.masked(e.x, e.y));
}

TEST_CASE("dimension and calibration errors") {
  auto cal = unit();
  std::vector<std::uint16_t> small(10);
  CHECK_THROWS_AS(correct_frame(small, W, H, cal), DimensionError);
  CHECK_THROWS_AS(correct_frame(std::vector<std::uint16_t>(W * H), W + 1, H, cal), DimensionError);
  cal.gain.pop_back();
  CHECK_THROWS_AS(cal.validate(), DimensionError);
  cal = unit();
  cal.gain[3] = 0.0f;
  CHECK_THROWS_AS(cal.validate(), ConfigError);
  cal = unit();
  cal.cti[2] = 1.0;
  CHECK_THROWS_AS(cal.validate(), ConfigError);
  CHECK_THROWS_AS(build_exclusion_mask(W, H, {{W, 0}}, 1), ConfigError);
}

TEST_CASE("reconstruction is repeatable across frames") {
  Frame f;
  f.set(5, 6, 1050);
  f.set(15, 12, 880);
  FrameReconstructor r(unit());
  EventList out;
  for (int k = 0; k < 5; ++k) r.process(f.raw.data(), k, out);
  REQUIRE(out.size() == 10);
  for (int k = 0; k < 5; ++k) {
    CHECK(out[2 * k].frame_id == k);
    CHECK(out[2 * k].energy_kev == 10.5);
    CHECK(out[2 * k + 1].energy_kev == 8.8);
  }
}

TEST_CASE("forward model round trip on isolated photons") {
  ExperimentGeometry g;
  SynthConfig c;
  c.gain_spread = 0.05;
  c.cti_mean = 5e-4;
  c.masked_rows = {40};
  c.masked_cols = {100};
  const DetectorModel model(g, c);
  const auto cal = model.calibration();
  FrameReconstructor r(cal);
  std::vector<std::uint16_t> raw;
  double de = 0.0, de2 = 0.0, dx = 0.0;
  int found = 0, sent = 0;
  for (int f = 0; f < 400; ++f) {
    std::vector<TrueEvent> evs;
    for (int k = 0; k < 6; ++k) {
      TrueEvent e;
      e.frame_id = f;
      e.x_mm = (10.0 + 40.0 * k + (f % 7) * 0.3) * g.pitch_x_mm();
      e.y_mm = (60.0 + (f % 60) - 30.0 + 0.21) * g.pitch_y_mm();
      e.energy_kev = 7.0 + k;
      evs.push_back(e);
    }
    model.render(f, evs, raw);
    EventList out;
    r.process(raw.data(), f, out);
    for (const auto& t : evs) {
      const auto p = model.to_pixel(t);
      // Photons next to the exclusion mask are dropped by design.
      bool near = false;
      const int px = static_cast<int>(std::lround(p.x)), py = static_cast<int>(std::lround(p.y));
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx2 = -1; dx2 <= 1; ++dx2) near = near || cal.masked(px + dx2, py + dy);
      }
      if (near) continue;
      ++sent;
      for (const auto& e : out) {
        if (std::fabs(e.cx - p.x) < 1.0 && std::fabs(e.cy - p.y) < 1.0) {
          ++found;
          const double d = e.energy_kev - t.energy_kev;
          de += d;
          de2 += d * d;
          dx += std::fabs(e.cx - p.x);
        }
      }
    }
  }
  CHECK(static_cast<double>(found) / sent > 0.97);
  CHECK(std::fabs(de / found) < 0.01);
  // Resolution 150 eV FWHM plus readout noise.
  CHECK(std::sqrt(de2 / found) < 0.1);
  CHECK(dx / found < 0.5);
}
