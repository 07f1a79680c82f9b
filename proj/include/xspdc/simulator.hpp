#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xspdc/config.hpp"
#include "xspdc/geometry.hpp"
#include "xspdc/rng.hpp"

namespace xspdc {

/// Photon-energy window [low, high) in keV.
struct EnergyWindow {
  double low_kev = 0.0;
  double high_kev = 0.0;

  double center() const { return 0.5 * (low_kev + high_kev); }
  double width() const { return high_kev - low_kev; }
  bool contains(double e_kev) const { return e_kev >= low_kev && e_kev < high_kev; }
  void validate() const;

  /// Parses "10.3-10.7".
  static EnergyWindow parse(const std::string& text);
  std::string label() const;
};

/// Signal (high-energy, side A) and idler (low-energy, side B) windows.
struct WindowPair {
  EnergyWindow signal;
  EnergyWindow idler;

  /// Throws WindowMismatchError unless the window sums bracket the pump energy.
  void check_conjugate(double pump_energy_kev) const;
  /// Parses "10.3-10.7:10.3-10.7".
  static WindowPair parse(const std::string& text);
  /// Parses a `;`-separated list of window pairs.
  static std::vector<WindowPair> parse_list(const std::string& text);
  std::string label() const;
};

enum class Quadrature { linear_phase, midpoint };
enum class Normalization { relative, pairs_per_hour };

struct SimConfig {
  double energy_step_ev = 10.0;
  int pixel_supersample = 1;  ///< n x n evaluation points per pixel
  double kappa_eff = 1.0;     ///< pure normalisation of the low-gain rate
  bool include_footprint_broadening = false;
  std::int64_t mc_samples = 100000;
  std::uint64_t rng_seed = 1;
  Quadrature quadrature = Quadrature::linear_phase;

  void validate() const;
};

SimConfig sim_config_from(const KeyValueConfig& cfg, const std::string& prefix = "simulate.");

/// Coincidence-rate density over detector pixels. Columns up to and including
/// the boundary column carry the signal window, the rest the idler window.
struct FarFieldMap {
  int width = 0;
  int height = 0;
  std::vector<double> values;  ///< row-major
  WindowPair windows;
  Normalization normalization = Normalization::relative;
  double raw_peak = 0.0;  ///< un-normalised maximum, kappa_eff included
  double pairs_per_hour_per_unit = 0.0;
  std::string geometry_hash;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Low-gain biphoton weight sinc^2(dk_z L / 2); dk_z in 1/Angstrom, L in mm.
double pair_weight(double dk_z, double length_mm);

/// Integral of pair_weight over photon energy (keV) for one emission ray,
/// across [e_lo, e_hi] in steps no wider than `step_kev`.
double energy_integrated_weight(const TransverseSolver& solver, const TransverseSolver::Ray& ray, double e_lo,
                                double e_hi, double step_kev, double length_mm, Quadrature quadrature);

/// Energy range of the pixel's own photon that keeps the partner in its window.
struct EnergyRange {
  double lo = 0.0;
  double hi = 0.0;
  bool empty() const { return !(hi > lo); }
};
EnergyRange own_energy_range(const WindowPair& windows, double pump_energy_kev, bool signal_side);

/// Far-field coincidence map. Each pixel integrates the phase-matching weight
/// over the energies of its own window whose transverse-matched partner lands
/// in the conjugate window. Throws WindowMismatchError for non-conjugate windows.
FarFieldMap far_field_map(const ExperimentGeometry& geom, const WindowPair& windows, const SimConfig& cfg);
FarFieldMap far_field_map(const ExperimentGeometry& geom, const EnergyWindow& s_window, const EnergyWindow& i_window,
                          const SimConfig& cfg);

/// Scale that maps the raw integrals of `maps` to a total of `total_pairs_per_hour`.
double calibrate_pairs_per_hour(const std::vector<FarFieldMap>& maps, double total_pairs_per_hour);
FarFieldMap to_pairs_per_hour(const FarFieldMap& map, double pairs_per_hour_per_unit);

/// Ring radius (reference pixels) of perfect longitudinal matching for a photon
/// of this energy, averaged over the +theta and -theta directions.
double ring_radius_predicted(const ExperimentGeometry& geom, double omega_kev);
/// Same ring in radians of deviation from the cone axis.
double ring_radius_angle(const ExperimentGeometry& geom, double omega_kev);

/// Displacement of an emission origin, projected onto the detector axes.
struct SourceOffset {
  double along_rows_mm = 0.0;  ///< diffraction-plane direction
  double along_cols_mm = 0.0;  ///< out-of-plane direction
};

/// Lateral extent (mm) of the illuminated region in the diffraction plane:
/// entrance footprint plus the walk of the pump through the thickness.
double footprint_extent_mm(const ExperimentGeometry& geom);
SourceOffset sample_source_offset(const ExperimentGeometry& geom, CounterRng& rng);

/// Normalised 1D kernels (odd length, centred) along rows and columns.
struct FootprintKernel {
  std::vector<double> rows;
  std::vector<double> cols;
};

struct FootprintEstimate {
  double fwhm_px = 0.0;   ///< reference pixels along the ring-radial (row) axis
  double fwhm_mm = 0.0;
  double fwhm_deg = 0.0;  ///< angular width seen from the crystal
  FootprintKernel kernel;
};

/// Monte Carlo over emission origins; FWHM of the projected source profile.
FootprintEstimate footprint_estimate(const ExperimentGeometry& geom, const SimConfig& cfg);
double footprint_fwhm(const ExperimentGeometry& geom, const SimConfig& cfg);

/// Separable convolution with zero padding; keeps the map's normalisation.
FarFieldMap convolve_footprint(const FarFieldMap& map, const FootprintKernel& kernel);

/// Full width at half maximum of a sampled profile (linear interpolation at
/// the outermost half-maximum crossings), in units of `bin_width`.
double profile_fwhm(const std::vector<double>& profile, double bin_width);

}  // namespace xspdc
