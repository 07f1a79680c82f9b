#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xspdc/events.hpp"
#include "xspdc/geometry.hpp"
#include "xspdc/pairs.hpp"
#include "xspdc/simulator.hpp"

namespace xspdc {

/// Counts against physical distance from the ring centre (reference px).
struct RadialHistogram {
  std::vector<double> edges_px;
  std::vector<double> counts;
  /// Sorted distances of the individual entries; empty for histograms built
  /// from counts alone, in which case bin centres stand in.
  std::vector<double> distances;
  PixelCoord center;
  std::string label;

  double bin_width() const { return edges_px.size() > 1 ? edges_px[1] - edges_px[0] : 0.0; }
  double bin_center(std::size_t k) const { return 0.5 * (edges_px[k] + edges_px[k + 1]); }
};

/// Pixels are first grouped into rebin x rebin super-pixels, each placed at
/// its own centre; `bin_px` is the bin width in reference pixels.
RadialHistogram radial_histogram(const std::vector<PixelCoord>& positions, const ExperimentGeometry& geom,
                                 int rebin = 4, double bin_px = 8.0, std::string label = {});
std::vector<PixelCoord> event_pixels(const EventList& events);

struct RingFit {
  double radius_px = 0.0;
  double radius_deg = 0.0;
  double uncertainty_px = 0.0;
  double uncertainty_deg = 0.0;
  double fwhm_px = 0.0;
  double fwhm_deg = 0.0;
  double energy_kev = 0.0;
};

enum class RadiusMethod {
  /// Count-weighted bin centres over the contiguous bins at or above half maximum.
  half_max_bins,
  /// Mean distance of the entries between the interpolated half-maximum
  /// crossings; falls back to half_max_bins without entry distances.
  fwhm_entries,
};

/// Throws NoPeakError when the peak is below twice the median bin.
RingFit ring_radius(const RadialHistogram& h, const ExperimentGeometry& geom, double energy_kev = 0.0,
                    RadiusMethod method = RadiusMethod::fwhm_entries);

struct ScalingPoint {
  double e_ratio = 0.0;      ///< signal energy / idler energy
  double angle_ratio = 0.0;  ///< -r_idler / r_signal
  double err = 0.0;
};

ScalingPoint scaling_point(const WindowPair& windows, const RingFit& signal, const RingFit& idler);

struct ScalingFit {
  std::vector<ScalingPoint> points;
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double intercept_stderr = 0.0;
  double jackknife_slope_stderr = 0.0;
  bool weighted = false;
};

/// Least-squares line through the points (inverse-variance weights if asked).
/// Throws DegenerateFitError with fewer than 3 points or a single abscissa.
ScalingFit scaling_fit(const std::vector<ScalingPoint>& points, bool weighted = false);

/// Extraction and metrology results for one window pair.
struct WindowResult {
  WindowPair windows;
  double configured_rate_per_hour = 0.0;
  ThresholdSummary threshold;
  AccidentalEstimate accidentals;
  RadialHistogram signal_hist;
  RadialHistogram idler_hist;
  std::optional<RingFit> signal_fit;
  std::optional<RingFit> idler_fit;
  bool no_signal = false;
  std::string note;
};

struct AnalysisReport {
  std::vector<WindowResult> windows;
  std::optional<ScalingFit> scaling;
  std::string scaling_note;
  double exposure_h = 0.0;
  std::string contrast_definition = "(retained - accidental) / (retained + accidental)";
};

/// Histograms and ring fits of the retained pairs of one window.
WindowResult analyze_window(const PairMap& map, const WindowPair& windows, const ExperimentGeometry& geom,
                            int rebin = 4, double bin_px = 8.0, RadiusMethod method = RadiusMethod::fwhm_entries);

/// Fits the scaling law over every window with both rings measured.
void fit_scaling(AnalysisReport& report, bool weighted = false);

std::string report_json(const AnalysisReport& report, const ExperimentGeometry& geom);

/// report.json plus `hist_<k>_{signal,idler}.csv`, `scaling_points.csv` and
/// `scaling_line.csv` in `dir`. Returns the written paths.
std::vector<std::filesystem::path> write_report(const std::filesystem::path& dir, const AnalysisReport& report,
                                                const ExperimentGeometry& geom);

}  // namespace xspdc
