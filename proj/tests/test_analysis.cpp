#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "json.hpp"
#include "xspdc/analysis.hpp"
#include "xspdc/constants.hpp"
#include "xspdc/error.hpp"
#include "xspdc/io.hpp"
#include "xspdc/synth.hpp"

using namespace xspdc;
namespace fs = std::filesystem;

namespace {

RadialHistogram from_counts(std::vector<double> counts, double bw = 8.0) {
  RadialHistogram h;
  h.counts = std::move(counts);
  for (std::size_t k = 0; k <= h.counts.size(); ++k) h.edges_px.push_back(k * bw);
  return h;
}

// Direct weighted mean over the contiguous bins at or above half the peak.
double brute_half_max(const std::vector<double>& c, double bw) {
  std::size_t peak = 0;
  for (std::size_t k = 1; k < c.size(); ++k) {
    if (c[k] > c[peak]) peak = k;
  }
  long lo = static_cast<long>(peak), hi = lo;
  while (lo - 1 >= 0 && 2.0 * c[lo - 1] >= c[peak]) --lo;
  while (hi + 1 < static_cast<long>(c.size()) && 2.0 * c[hi + 1] >= c[peak]) ++hi;
  long double w = 0, s = 0;
  for (long k = lo; k <= hi; ++k) {
    w += c[k];
    s += c[k] * (k + 0.5L) * bw;
  }
  return static_cast<double>(s / w);
}

const FarFieldMap& degenerate_map() {
  static const FarFieldMap m = far_field_map(ExperimentGeometry{}, WindowPair::parse("10.3-10.7:10.3-10.7"), SimConfig{});
  return m;
}

// Pair-only events through the event-level detector path, split by side.
std::pair<std::vector<PixelCoord>, std::vector<PixelCoord>> degenerate_pairs(std::int64_t frames) {
  ExperimentGeometry g;
  SynthConfig c;
  c.duration_h = frames / c.frame_rate_hz / 3600.0;
  c.pair_rates_per_hour = {3600.0 * 1000.0 * 0.5};
  const EventGenerator gen(g, c, {degenerate_map()});
  const DetectorModel model(g, c);
  std::vector<PixelCoord> a, b;
  std::vector<TrueEvent> evs;
  for (std::int64_t f = 0; f < frames; ++f) {
    evs.clear();
    gen.frame_events(f, evs);
    EventList out;
    model.fast_events(f, evs, out);
    for (const auto& e : out) {
      (e.x <= g.boundary_column() ? a : b).push_back({double(e.x), double(e.y)});
    }
  }
  return {a, b};
}

}  // namespace

TEST_CASE("delta ring fills a single bin") {
  ExperimentGeometry g;
  std::vector<PixelCoord> pts;
  for (int y = 0; y < g.n_rows; ++y) {
    for (int x = 0; x < g.n_cols; ++x) {
      const double r = g.radial_distance_px({double(x), double(y)});
      if (r >= 41.0 && r < 47.0) pts.push_back({double(x), double(y)});
    }
  }
  const auto h = radial_histogram(pts, g, 1, 8.0);
  for (std::size_t k = 0; k < h.counts.size(); ++k) CHECK(h.counts[k] == (k == 5 ? double(pts.size()) : 0.0));
  const auto f = ring_radius(h, g);
  CHECK(f.radius_px > 41.0);
  CHECK(f.radius_px < 47.0);
  CHECK(f.uncertainty_px == 8.0);
}

TEST_CASE("histogram bins and rebinning") {
  ExperimentGeometry g;
  const auto h = radial_histogram({}, g);
  CHECK(h.bin_width() == 8.0);
  for (std::size_t k = 1; k < h.edges_px.size(); ++k) CHECK(h.edges_px[k] > h.edges_px[k - 1]);
  CHECK(h.edges_px.back() >= g.radial_distance_px({-0.5, -0.5}));
  // All 16 pixels of one super-pixel land on its centre.
  std::vector<PixelCoord> block;
  for (int y = 40; y < 44; ++y) {
    for (int x = 60; x < 64; ++x) block.push_back({double(x), double(y)});
  }
  const auto hb = radial_histogram(block, g, 4, 8.0);
  const double r = g.radial_distance_px({61.5, 41.5});
  for (double d : hb.distances) CHECK(d == r);
  CHECK_THROWS_AS(radial_histogram(block, g, 0, 8.0), ConfigError);
  CHECK_THROWS_AS(radial_histogram(block, g, 4, 0.0), ConfigError);
}

TEST_CASE("uniform events follow the annulus area") {
  ExperimentGeometry g;
  std::mt19937_64 rng(12);
  const int n = 2000000;
  std::vector<PixelCoord> pts(n);
  for (auto& p : pts) p = {double(rng() % g.n_cols), double(rng() % g.n_rows)};
  const auto h = radial_histogram(pts, g, 4, 8.0);
  // Two detector pixels per reference pixel area (48 um columns, 96 um rows).
  const double density = double(n) / (g.n_cols * g.n_rows) * 2.0;
  for (std::size_t k = 2; k < 7; ++k) {
    const double r0 = h.edges_px[k], r1 = h.edges_px[k + 1];
    const double want = density * kPi * (r1 * r1 - r0 * r0);
    CAPTURE(k);
    // Poisson 3 sigma plus the super-pixel discretisation of the annulus.
    CHECK(std::fabs(h.counts[k] - want) <= 3.0 * std::sqrt(want) + 0.06 * want);
  }
}

TEST_CASE("symmetric triangle peaks at its centre bin") {
  const auto h = from_counts({1, 1, 2, 4, 6, 8, 6, 4, 2, 1, 1, 1});
  ExperimentGeometry g;
  for (auto m : {RadiusMethod::half_max_bins, RadiusMethod::fwhm_entries}) {
    const auto f = ring_radius(h, g, 0.0, m);
    CHECK(f.radius_px == doctest::Approx(5.5 * 8.0).epsilon(1e-14));
  }
  const auto f = ring_radius(h, g);
  // Crossings at 3.5 and 7.5 bins.
  CHECK(f.fwhm_px == doctest::Approx(32.0));
  CHECK(f.radius_deg == doctest::Approx(rad_to_deg(std::atan(44.0 * 0.096 / g.detector_distance_mm))));
}

TEST_CASE("half-max bins match a direct computation") {
  ExperimentGeometry g;
  std::mt19937 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> c(20);
    std::uniform_real_distribution<double> u(0.0, 3.0);
    for (auto& v : c) v = u(rng);
    const int peak = 4 + trial % 10;
    // Skewed peak: slow rise, fast fall.
    for (int k = 0; k < 20; ++k) {
      const double d = k - peak;
      c[k] += 40.0 * std::exp(d < 0 ? d / 3.0 : -d * d / 1.5);
    }
    const auto f = ring_radius(from_counts(c, 8.0), g, 0.0, RadiusMethod::half_max_bins);
    CHECK(f.radius_px == doctest::Approx(brute_half_max(c, 8.0)).epsilon(1e-12));
  }
}

TEST_CASE("entry mean over the interpolated half-maximum width") {
  ExperimentGeometry g;
  std::mt19937 rng(8);
  std::normal_distribution<double> n(50.0, 6.0);
  std::vector<PixelCoord> dummy;
  RadialHistogram h = from_counts(std::vector<double>(15, 0.0));
  for (int i = 0; i < 20000; ++i) {
    const double r = n(rng);
    if (r < 0 || r >= 120.0) continue;
    h.counts[static_cast<std::size_t>(r / 8.0)] += 1.0;
    h.distances.push_back(r);
  }
  std::sort(h.distances.begin(), h.distances.end());
  const auto f = ring_radius(h, g);
  // Direct computation from the crossings.
  const auto& c = h.counts;
  std::size_t peak = std::max_element(c.begin(), c.end()) - c.begin();
  const double half = c[peak] / 2.0;
  std::size_t lo = peak, hi = peak;
  while (lo > 0 && c[lo - 1] >= half) --lo;
  while (hi + 1 < c.size() && c[hi + 1] >= half) ++hi;
  const double left = (lo - 0.5 + (half - c[lo - 1]) / (c[lo] - c[lo - 1])) * 8.0;
  const double right = (hi + 0.5 + (c[hi] - half) / (c[hi] - c[hi + 1])) * 8.0;
  double s = 0.0;
  int m = 0;
  for (double d : h.distances) {
    if (d >= left && d < right) {
      s += d;
      ++m;
    }
  }
  CHECK(f.radius_px == doctest::Approx(s / m).epsilon(1e-12));
  CHECK(f.fwhm_px == doctest::Approx(right - left).epsilon(1e-12));
  // Gaussian FWHM 2.355 sigma, widened by the bin width, and a centred estimate.
  CHECK(f.fwhm_px == doctest::Approx(2.3548 * std::sqrt(36.0 + 64.0 / 12.0)).epsilon(0.1));
  CHECK(f.radius_px == doctest::Approx(50.0).epsilon(0.01));
}

TEST_CASE("radius is invariant under count rescaling") {
  ExperimentGeometry g;
  const std::vector<double> c{2, 3, 5, 9, 20, 31, 17, 8, 4, 3, 2};
  const auto f1 = ring_radius(from_counts(c), g, 0.0, RadiusMethod::half_max_bins);
  for (double scale : {0.1, 3.0, 1e6}) {
    auto s = c;
    for (auto& v : s) v *= scale;
    for (auto m : {RadiusMethod::half_max_bins, RadiusMethod::fwhm_entries}) {
      const auto f2 = ring_radius(from_counts(s), g, 0.0, m);
      CHECK(f2.radius_px == doctest::Approx(f1.radius_px).epsilon(1e-12));
      CHECK(f2.fwhm_px == doctest::Approx(ring_radius(from_counts(c), g, 0.0, m).fwhm_px).epsilon(1e-12));
    }
  }
  // Repeating every entry is the same rescaling for the entry mean.
  RadialHistogram h = from_counts(std::vector<double>(10, 0.0));
  RadialHistogram h3 = h;
  std::mt19937 rng(1);
  std::normal_distribution<double> n(40.0, 5.0);
  for (int i = 0; i < 3000; ++i) {
    const double r = n(rng);
    h.counts[static_cast<std::size_t>(r / 8.0)] += 1;
    h.distances.push_back(r);
    h3.counts[static_cast<std::size_t>(r / 8.0)] += 3;
    for (int k = 0; k < 3; ++k) h3.distances.push_back(r);
  }
  std::sort(h.distances.begin(), h.distances.end());
  std::sort(h3.distances.begin(), h3.distances.end());
  CHECK(ring_radius(h3, g).radius_px == doctest::Approx(ring_radius(h, g).radius_px).epsilon(1e-12));
}

TEST_CASE("no peak") {
  ExperimentGeometry g;
  CHECK_THROWS_AS(ring_radius(from_counts({3, 3, 3, 3, 3}), g), NoPeakError);
  CHECK_THROWS_AS(ring_radius(from_counts({0, 0, 0}), g), NoPeakError);
  CHECK_THROWS_AS(ring_radius(from_counts({}), g), NoPeakError);
  CHECK_NOTHROW(ring_radius(from_counts({1, 1, 1, 2, 1}), g));
}

TEST_CASE("scaling law fit") {
  std::vector<ScalingPoint> pts;
  for (double r : {0.83, 1.0, 1.21}) pts.push_back({r, -r, 0.01});
  for (bool weighted : {false, true}) {
    const auto f = scaling_fit(pts, weighted);
    CHECK(f.slope == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(std::fabs(f.intercept) < 1e-12);
    CHECK(f.slope_stderr < 1e-7);
  }
  CHECK_THROWS_AS(scaling_fit({{1.0, -1.0, 0.1}, {1.0, -1.1, 0.1}, {1.0, -0.9, 0.1}}), DegenerateFitError);
  CHECK_THROWS_AS(scaling_fit({{1.0, -1.0, 0.1}, {1.2, -1.2, 0.1}}), DegenerateFitError);
  CHECK_THROWS_AS(scaling_fit({{1.0, -1.0, 0.0}, {1.2, -1.2, 0.1}, {1.4, -1.4, 0.1}}, true), DegenerateFitError);
}

TEST_CASE("scaling points carry the opposite-side sign") {
  const auto w = WindowPair::parse("12.3-12.7:8.3-8.7");
  RingFit s, i;
  s.radius_px = 28.0;
  s.uncertainty_px = 8.0;
  i.radius_px = 41.0;
  i.uncertainty_px = 8.0;
  const auto p = scaling_point(w, s, i);
  CHECK(p.e_ratio == doctest::Approx(12.5 / 8.5));
  CHECK(p.angle_ratio == doctest::Approx(-41.0 / 28.0));
  CHECK(p.angle_ratio < 0.0);
  CHECK(p.err == doctest::Approx(41.0 / 28.0 * std::hypot(8.0 / 41.0, 8.0 / 28.0)));
  s.radius_px = 0.0;
  CHECK_THROWS_AS(scaling_point(w, s, i), DomainError);
}

TEST_CASE("jackknife agrees with the least-squares error") {
  std::mt19937 rng(17);
  std::normal_distribution<double> noise(0.0, 0.03);
  const std::vector<double> xs{0.43, 0.66, 0.83, 1.0, 1.21, 1.5, 1.8};
  std::vector<double> ratios;
  for (int trial = 0; trial < 400; ++trial) {
    std::vector<ScalingPoint> pts;
    for (double x : xs) pts.push_back({x, -x + noise(rng), 0.03});
    const auto f = scaling_fit(pts);
    ratios.push_back(f.jackknife_slope_stderr / f.slope_stderr);
  }
  std::sort(ratios.begin(), ratios.end());
  const double median = ratios[ratios.size() / 2];
  CHECK(median > 0.5);
  CHECK(median < 1.5);
}

TEST_CASE("degenerate rings agree on both halves and sit at 0.94 degrees") {
  ExperimentGeometry g;
  const auto [a, b] = degenerate_pairs(20000);
  REQUIRE(a.size() > 3000);
  REQUIRE(b.size() > 3000);
  const auto fa = ring_radius(radial_histogram(a, g), g, 10.5);
  const auto fb = ring_radius(radial_histogram(b, g), g, 10.5);
  CHECK(std::fabs(fa.radius_px - fb.radius_px) <= 8.0);
  CHECK(std::fabs(fa.radius_deg - 0.94) <= fa.uncertainty_deg);
  CHECK(std::fabs(fb.radius_deg - 0.94) <= fb.uncertainty_deg);
  CHECK(fa.fwhm_deg > 0.0);
  CHECK(fa.fwhm_deg < 0.6);
}

TEST_CASE("empty pair set reports no signal") {
  ExperimentGeometry g;
  ScanConfig cfg;
  const auto lat = RegionLattice::scan(g, cfg);
  const auto w = WindowPair::parse("10.3-10.7:10.3-10.7");
  auto m = scan_coincidences({}, CandidateSplit{}, lat, cfg, 21.0, 100, 0.1);
  threshold_subtract(m, lat, 0.2, AccidentalEstimate{});
  AnalysisReport rep;
  rep.exposure_h = 0.1;
  rep.windows.push_back(analyze_window(m, w, g));
  fit_scaling(rep);
  const auto j = nlohmann::json::parse(report_json(rep, g));
  CHECK(j["no_signal"] == true);
  CHECK(j["windows"][0]["no_signal"] == true);
  CHECK(j["windows"][0]["rates"]["true_per_hour"] == 0.0);
  CHECK(j["windows"][0]["signal_ring"].is_null());
  CHECK(j["scaling"].is_null());
  CHECK_FALSE(j["scaling_note"].get<std::string>().empty());
}

TEST_CASE("report files are regenerated identically") {
  ExperimentGeometry g;
  AnalysisReport rep;
  rep.exposure_h = 2.0;
  for (double e : {10.5, 11.5, 12.5}) {
    WindowResult w;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.1f-%.1f:%.1f-%.1f", e - 0.2, e + 0.2, 20.8 - e, 21.2 - e);
    w.windows = WindowPair::parse(buf);
    w.signal_hist = from_counts({1, 2, 9, 3, 1});
    w.idler_hist = from_counts({1, 1, 3, 9, 2});
    w.signal_fit = ring_radius(w.signal_hist, g, e);
    w.idler_fit = ring_radius(w.idler_hist, g, 21.0 - e);
    rep.windows.push_back(w);
  }
  fit_scaling(rep);
  REQUIRE(rep.scaling.has_value());
  const fs::path d1 = fs::temp_directory_path() / "xspdc_report_a";
  const fs::path d2 = fs::temp_directory_path() / "xspdc_report_b";
  const auto p1 = write_report(d1, rep, g);
  const auto p2 = write_report(d2, rep, g);
  REQUIRE(p1.size() == p2.size());
  CHECK(p1.size() == 9);
  for (std::size_t k = 0; k < p1.size(); ++k) CHECK(read_text_file(p1[k]) == read_text_file(p2[k]));
  const auto j = nlohmann::json::parse(read_text_file(d1 / "report.json"));
  CHECK(j["scaling"]["points"].size() == 3);
  fs::remove_all(d1);
  fs::remove_all(d2);
}
