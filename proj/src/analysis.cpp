#include "xspdc/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "xspdc/constants.hpp"
#include "xspdc/error.hpp"
#include "xspdc/io.hpp"

namespace xspdc {

namespace fs = std::filesystem;
using json = nlohmann::json;

RadialHistogram radial_histogram(const std::vector<PixelCoord>& positions, const ExperimentGeometry& geom, int rebin,
                                 double bin_px, std::string label) {
  if (rebin < 1) throw ConfigError("rebin must be >= 1");
  if (!(bin_px > 0.0)) throw ConfigError("histogram bin width must be > 0");
  RadialHistogram h;
  h.center = geom.ring_center();
  h.label = std::move(label);
  if (!geom.inside(static_cast<int>(std::lround(h.center.x)), static_cast<int>(std::lround(h.center.y)))) {
    throw ConfigError("ring centre lies outside the detector");
  }
  double reach = 0.0;
  for (double cx : {-0.5, geom.n_cols - 0.5}) {
    for (double cy : {-0.5, geom.n_rows - 0.5}) reach = std::max(reach, geom.radial_distance_px({cx, cy}));
  }
  const auto nbins = static_cast<std::size_t>(std::ceil(reach / bin_px));
  h.edges_px.resize(nbins + 1);
  for (std::size_t k = 0; k <= nbins; ++k) h.edges_px[k] = k * bin_px;
  h.counts.assign(nbins, 0.0);
  const double half = 0.5 * (rebin - 1);
  for (const auto& p : positions) {
    const int x = static_cast<int>(std::lround(p.x));
    const int y = static_cast<int>(std::lround(p.y));
    const double sx = std::floor(static_cast<double>(x) / rebin) * rebin + half;
    const double sy = std::floor(static_cast<double>(y) / rebin) * rebin + half;
    const double r = geom.radial_distance_px({sx, sy});
    const auto k = static_cast<std::size_t>(r / bin_px);
    if (k < nbins) {
      h.counts[k] += 1.0;
      h.distances.push_back(r);
    }
  }
  std::sort(h.distances.begin(), h.distances.end());
  return h;
}

std::vector<PixelCoord> event_pixels(const EventList& events) {
  std::vector<PixelCoord> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back({static_cast<double>(e.x), static_cast<double>(e.y)});
  return out;
}

RingFit ring_radius(const RadialHistogram& h, const ExperimentGeometry& geom, double energy_kev,
                    RadiusMethod method) {
  const auto& c = h.counts;
  if (c.empty()) throw NoPeakError("empty histogram");
  const std::size_t peak = static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin());
  std::vector<double> sorted = c;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  double median = sorted[sorted.size() / 2];
  if (sorted.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(sorted.begin(), sorted.begin() + sorted.size() / 2));
  }
  if (!(c[peak] > 0.0) || c[peak] < 2.0 * median) {
    throw NoPeakError("histogram " + h.label + " has no peak above twice its median");
  }
  const double half = 0.5 * c[peak];
  std::size_t lo = peak, hi = peak;
  while (lo > 0 && c[lo - 1] >= half) --lo;
  while (hi + 1 < c.size() && c[hi + 1] >= half) ++hi;
  const double bw = h.bin_width();
  const double left = lo == 0 ? 0.0 : (lo - 1) + 0.5 + (half - c[lo - 1]) / (c[lo] - c[lo - 1]);
  const double right = hi + 1 == c.size() ? static_cast<double>(c.size()) : hi + 0.5 + (c[hi] - half) / (c[hi] - c[hi + 1]);

  double w = 0.0, wr = 0.0;
  if (method == RadiusMethod::fwhm_entries && !h.distances.empty()) {
    const auto first = std::lower_bound(h.distances.begin(), h.distances.end(), left * bw);
    const auto last = std::lower_bound(first, h.distances.end(), right * bw);
    for (auto it = first; it != last; ++it) wr += *it;
    w = static_cast<double>(last - first);
  }
  if (!(w > 0.0)) {
    w = wr = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) {
      w += c[k];
      wr += c[k] * h.bin_center(k);
    }
  }

  const double D = geom.detector_distance_mm;
  const double ref = geom.reference_pitch_mm();
  auto to_deg = [&](double px) { return rad_to_deg(std::atan(px * ref / D)); };
  RingFit f;
  f.radius_px = wr / w;
  f.radius_deg = to_deg(f.radius_px);
  f.uncertainty_px = bw;
  f.uncertainty_deg = to_deg(f.radius_px + bw) - f.radius_deg;
  f.fwhm_px = (right - left) * bw;
  f.fwhm_deg = to_deg(f.fwhm_px);
  f.energy_kev = energy_kev;
  return f;
}

ScalingPoint scaling_point(const WindowPair& windows, const RingFit& s, const RingFit& i) {
  if (!(s.radius_px > 0.0) || !(i.radius_px > 0.0)) throw DomainError("ring radii must be > 0");
  ScalingPoint p;
  p.e_ratio = windows.signal.center() / windows.idler.center();
  p.angle_ratio = -i.radius_px / s.radius_px;
  p.err = std::fabs(p.angle_ratio) *
          std::hypot(i.uncertainty_px / i.radius_px, s.uncertainty_px / s.radius_px);
  return p;
}

namespace {

struct Line {
  double slope, intercept, slope_se, intercept_se;
};

Line least_squares(const std::vector<ScalingPoint>& pts, bool weighted) {
  const std::size_t n = pts.size();
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (const auto& p : pts) {
    const double w = weighted ? 1.0 / (p.err * p.err) : 1.0;
    sw += w;
    sx += w * p.e_ratio;
    sy += w * p.angle_ratio;
  }
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (const auto& p : pts) {
    const double w = weighted ? 1.0 / (p.err * p.err) : 1.0;
    sxx += w * (p.e_ratio - mx) * (p.e_ratio - mx);
    sxy += w * (p.e_ratio - mx) * (p.angle_ratio - my);
  }
  if (!(sxx > 0.0)) throw DegenerateFitError("all energy ratios are equal");
  Line l;
  l.slope = sxy / sxx;
  l.intercept = my - l.slope * mx;
  double ssr = 0.0;
  for (const auto& p : pts) {
    const double w = weighted ? 1.0 / (p.err * p.err) : 1.0;
    const double r = p.angle_ratio - (l.intercept + l.slope * p.e_ratio);
    ssr += w * r * r;
  }
  const double s2 = n > 2 ? ssr / static_cast<double>(n - 2) : 0.0;
  l.slope_se = std::sqrt(s2 / sxx);
  l.intercept_se = std::sqrt(s2 * (1.0 / sw + mx * mx / sxx));
  return l;
}

}  // namespace

ScalingFit scaling_fit(const std::vector<ScalingPoint>& points, bool weighted) {
  if (points.size() < 3) throw DegenerateFitError("scaling fit needs at least 3 points");
  if (weighted) {
    for (const auto& p : points) {
      if (!(p.err > 0.0)) throw DegenerateFitError("weighted fit needs positive uncertainties");
    }
  }
  const Line l = least_squares(points, weighted);
  ScalingFit f;
  f.points = points;
  f.slope = l.slope;
  f.intercept = l.intercept;
  f.slope_stderr = l.slope_se;
  f.intercept_stderr = l.intercept_se;
  f.weighted = weighted;

  std::vector<double> loo;
  for (std::size_t k = 0; k < points.size(); ++k) {
    std::vector<ScalingPoint> sub;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j != k) sub.push_back(points[j]);
    }
    try {
      loo.push_back(least_squares(sub, weighted).slope);
    } catch (const DegenerateFitError&) {
    }
  }
  if (loo.size() == points.size()) {
    double mean = 0.0;
    for (double s : loo) mean += s;
    mean /= loo.size();
    double ss = 0.0;
    for (double s : loo) ss += (s - mean) * (s - mean);
    f.jackknife_slope_stderr = std::sqrt((loo.size() - 1.0) / loo.size() * ss);
  }
  return f;
}

WindowResult analyze_window(const PairMap& map, const WindowPair& windows, const ExperimentGeometry& geom, int rebin,
                            double bin_px, RadiusMethod method) {
  WindowResult r;
  r.windows = windows;
  r.threshold = map.threshold;
  r.accidentals = map.accidentals;
  std::vector<PixelCoord> a, b;
  for (auto p : map.retained_pairs) {
    a.push_back({static_cast<double>(map.pairs[p].a.x), static_cast<double>(map.pairs[p].a.y)});
    b.push_back({static_cast<double>(map.pairs[p].b.x), static_cast<double>(map.pairs[p].b.y)});
  }
  r.signal_hist = radial_histogram(a, geom, rebin, bin_px, "signal " + windows.signal.label());
  r.idler_hist = radial_histogram(b, geom, rebin, bin_px, "idler " + windows.idler.label());
  r.no_signal = map.threshold.all_below;
  if (r.no_signal) {
    r.note = "no region pair above threshold";
    return r;
  }
  try {
    r.signal_fit = ring_radius(r.signal_hist, geom, windows.signal.center(), method);
    r.idler_fit = ring_radius(r.idler_hist, geom, windows.idler.center(), method);
  } catch (const NoPeakError& e) {
    r.signal_fit.reset();
    r.idler_fit.reset();
    r.note = e.what();
  }
  return r;
}

void fit_scaling(AnalysisReport& report, bool weighted) {
  std::vector<ScalingPoint> pts;
  for (const auto& w : report.windows) {
    if (w.signal_fit && w.idler_fit) pts.push_back(scaling_point(w.windows, *w.signal_fit, *w.idler_fit));
  }
  try {
    report.scaling = scaling_fit(pts, weighted);
    report.scaling_note.clear();
  } catch (const DegenerateFitError& e) {
    report.scaling.reset();
    report.scaling_note = e.what();
  }
}

namespace {

json fit_json(const std::optional<RingFit>& f) {
  if (!f) return nullptr;
  return json{{"radius_px", f->radius_px},           {"radius_deg", f->radius_deg},
              {"uncertainty_px", f->uncertainty_px}, {"uncertainty_deg", f->uncertainty_deg},
              {"fwhm_px", f->fwhm_px},               {"fwhm_deg", f->fwhm_deg},
              {"energy_kev", f->energy_kev}};
}

}  // namespace

std::string report_json(const AnalysisReport& report, const ExperimentGeometry& geom) {
  json j;
  j["geometry_hash"] = geom.hash();
  j["exposure_h"] = report.exposure_h;
  j["contrast_definition"] = report.contrast_definition;
  json windows = json::array();
  bool any_signal = false;
  for (const auto& w : report.windows) {
    const auto& t = w.threshold;
    any_signal = any_signal || !w.no_signal;
    windows.push_back({
        {"windows", w.windows.label()},
        {"configured_rate_per_hour", w.configured_rate_per_hour},
        {"no_signal", w.no_signal},
        {"note", w.note},
        {"threshold",
         {{"fraction", t.fraction},
          {"level", t.level},
          {"max_count", t.max_count},
          {"retained_cells", t.retained_cells},
          {"retained_pairs", t.retained_pairs},
          {"covered_region_pairs", t.covered_region_pairs}}},
        {"rates",
         {{"retained_per_hour", t.retained_rate_per_hour},
          {"true_per_hour", t.true_rate_per_hour},
          {"true_stderr_per_hour", t.true_rate_stderr},
          {"expected_accidentals", t.expected_accidentals},
          {"contrast", t.contrast}}},
        {"accidentals",
         {{"rate_per_region_pair_per_hour", w.accidentals.rate_per_hour},
          {"stderr_per_hour", w.accidentals.stderr_per_hour},
          {"counts", w.accidentals.counts},
          {"region_pairs", w.accidentals.region_pairs},
          {"live_region_pairs", w.accidentals.live_region_pairs},
          {"low_statistics", w.accidentals.low_statistics}}},
        {"signal_ring", fit_json(w.signal_fit)},
        {"idler_ring", fit_json(w.idler_fit)},
    });
  }
  j["windows"] = windows;
  j["no_signal"] = !any_signal;
  if (report.scaling) {
    const auto& s = *report.scaling;
    json pts = json::array();
    for (const auto& p : s.points) pts.push_back({{"e_ratio", p.e_ratio}, {"angle_ratio", p.angle_ratio}, {"err", p.err}});
    j["scaling"] = {{"slope", s.slope},
                    {"intercept", s.intercept},
                    {"slope_stderr", s.slope_stderr},
                    {"intercept_stderr", s.intercept_stderr},
                    {"jackknife_slope_stderr", s.jackknife_slope_stderr},
                    {"weighted", s.weighted},
                    {"points", pts}};
  } else {
    j["scaling"] = nullptr;
    j["scaling_note"] = report.scaling_note;
  }
  return j.dump(2) + "\n";
}

namespace {

void write_hist(const fs::path& path, const RadialHistogram& h) {
  std::string text = "bin_lo_px,bin_hi_px,count\n";
  for (std::size_t k = 0; k < h.counts.size(); ++k) {
    text += format_double(h.edges_px[k]) + "," + format_double(h.edges_px[k + 1]) + "," + format_double(h.counts[k]) +
            "\n";
  }
  write_text_file(path, text);
}

}  // namespace

std::vector<fs::path> write_report(const fs::path& dir, const AnalysisReport& report, const ExperimentGeometry& geom) {
  std::vector<fs::path> out;
  fs::create_directories(dir);
  out.push_back(dir / "report.json");
  write_text_file(out.back(), report_json(report, geom));
  for (std::size_t k = 0; k < report.windows.size(); ++k) {
    out.push_back(dir / ("hist_" + std::to_string(k) + "_signal.csv"));
    write_hist(out.back(), report.windows[k].signal_hist);
    out.push_back(dir / ("hist_" + std::to_string(k) + "_idler.csv"));
    write_hist(out.back(), report.windows[k].idler_hist);
  }
  std::string pts = "e_ratio,angle_ratio,err\n";
  std::string line = "e_ratio,angle_ratio\n";
  if (report.scaling) {
    const auto& s = *report.scaling;
    double lo = s.points.front().e_ratio, hi = lo;
    for (const auto& p : s.points) {
      pts += format_double(p.e_ratio) + "," + format_double(p.angle_ratio) + "," + format_double(p.err) + "\n";
      lo = std::min(lo, p.e_ratio);
      hi = std::max(hi, p.e_ratio);
    }
    for (double x : {lo, hi}) line += format_double(x) + "," + format_double(s.intercept + s.slope * x) + "\n";
  }
  out.push_back(dir / "scaling_points.csv");
  write_text_file(out.back(), pts);
  out.push_back(dir / "scaling_line.csv");
  write_text_file(out.back(), line);
  return out;
}

}  // namespace xspdc
