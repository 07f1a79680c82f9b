#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xspdc/config.hpp"
#include "xspdc/events.hpp"
#include "xspdc/geometry.hpp"
#include "xspdc/recon.hpp"
#include "xspdc/rng.hpp"
#include "xspdc/simulator.hpp"

namespace xspdc {

enum class Origin : std::uint8_t { pair_signal, pair_idler, background };

/// A photon as emitted, before the detector sees it. Positions are on the
/// detector plane in mm, with pixel (0, 0) centred at the origin.
struct TrueEvent {
  std::int64_t frame_id = 0;
  double x_mm = 0.0;
  double y_mm = 0.0;
  double energy_kev = 0.0;
  Origin origin = Origin::background;
  std::int64_t pair_id = -1;
};

/// Piecewise-constant spectral density over `edges` (keV).
struct BackgroundSpectrum {
  std::vector<double> edges_kev{1.0, 7.5, 21.0};
  std::vector<double> density{3.0, 1.0};

  void validate() const;
  double sample(CounterRng& rng) const;
  /// Probability that a photon, after Gaussian smearing of width sigma,
  /// is measured in [lo, hi).
  double window_probability(double lo_kev, double hi_kev, double sigma_kev) const;
};

struct PairSourceSpec {
  double pairs_per_hour = 0.0;  ///< emitted pairs per hour for this window pair
};

struct SynthConfig {
  double duration_h = 0.01;
  double frame_rate_hz = 1000.0;
  std::vector<double> pair_rates_per_hour;  ///< one per map, in map order
  double background_rate_hz = 0.0;          ///< photons per second over the detector
  BackgroundSpectrum background_spectrum;
  double background_sigma_px = 0.0;         ///< 0 = uniform; else Gaussian about the ring centre
  double energy_resolution_ev = 150.0;      ///< FWHM
  double adu_per_kev = 100.0;
  double noise_adu = 2.0;
  double gain_spread = 0.02;  ///< relative rms of the per-pixel gain
  double cti_mean = 1e-4;
  double cti_spread = 0.2;    ///< relative rms of the per-column CTI
  std::vector<std::int64_t> masked_rows;
  std::vector<std::int64_t> masked_cols;
  double charge_cloud_um = 12.0;  ///< FWHM of the Gaussian charge cloud
  bool footprint_jitter = true;
  bool reflect_pairs = true;      ///< emit half the pairs point-reflected through the ring centre
  std::uint64_t rng_seed = 1;

  std::int64_t frame_count() const;
  double exposure_h(std::int64_t frames) const { return frames / frame_rate_hz / 3600.0; }
  void validate(const ExperimentGeometry& geom) const;
};

SynthConfig synth_config_from(const KeyValueConfig& cfg, const std::string& prefix = "synth.");

/// Draws transverse-matched pairs from one far-field map.
class PairSampler {
 public:
  PairSampler(const ExperimentGeometry& geom, const FarFieldMap& map, double energy_step_ev = 10.0);

  /// Signal on the map's signal side, idler at its transverse-matched
  /// partner. False if the draw failed (no partner solution).
  bool sample(CounterRng& rng, TrueEvent& signal, TrueEvent& idler) const;

 private:
  const ExperimentGeometry& geom_;
  TransverseSolver solver_;
  EnergyRange range_;
  double step_kev_;
  std::vector<double> cdf_;
  std::vector<std::uint32_t> pixels_;
};

/// Streams true events frame by frame; each frame has its own RNG stream.
class EventGenerator {
 public:
  EventGenerator(const ExperimentGeometry& geom, const SynthConfig& cfg, const std::vector<FarFieldMap>& maps);

  std::int64_t frame_count() const { return frames_; }
  void frame_events(std::int64_t frame_id, std::vector<TrueEvent>& out) const;

 private:
  void add_background(CounterRng& rng, std::int64_t frame_id, std::vector<TrueEvent>& out) const;

  const ExperimentGeometry& geom_;
  SynthConfig cfg_;
  std::vector<PairSampler> samplers_;
  std::vector<double> pairs_per_frame_;
  double background_per_frame_;
  std::int64_t frames_;
};

/// Whole run as one list (small runs and tests).
std::vector<TrueEvent> sample_events(const std::vector<FarFieldMap>& maps, const ExperimentGeometry& geom,
                                     const SynthConfig& cfg);

/// Detector forward model: smearing, charge sharing, gain, CTI, noise, masks.
class DetectorModel {
 public:
  DetectorModel(const ExperimentGeometry& geom, const SynthConfig& cfg);

  int width() const { return width_; }
  int height() const { return height_; }
  double adu_per_kev() const { return cfg_.adu_per_kev; }
  const std::vector<float>& gain() const { return gain_; }
  const std::vector<double>& cti() const { return cti_; }
  const std::vector<std::pair<int, int>>& defects() const { return defects_; }

  /// Calibration that exactly inverts this model.
  CalibrationSet calibration(double threshold_sigma = 5.0, int border = 1) const;

  /// Measured energy of one photon (Gaussian resolution).
  double smear_energy(CounterRng& rng, double energy_kev) const;

  /// Noise-free charge (ADU before gain/CTI) deposited by a photon of the
  /// given measured energy, accumulated into `charge`.
  void deposit(double x_px, double y_px, double energy_kev, std::vector<float>& charge) const;

  /// One raw frame from the frame's true events.
  void render(std::int64_t frame_id, const std::vector<TrueEvent>& events, std::vector<std::uint16_t>& out) const;

  /// Event-level shortcut: smearing, pixelisation and exclusion without raw
  /// frames. Appends reconstructed-equivalent events for one frame.
  void fast_events(std::int64_t frame_id, const std::vector<TrueEvent>& events, EventList& out) const;

  PixelCoord to_pixel(const TrueEvent& e) const;

 private:
  const ExperimentGeometry& geom_;
  SynthConfig cfg_;
  int width_;
  int height_;
  std::vector<float> gain_;
  std::vector<double> cti_;
  std::vector<float> forward_;  ///< gain * (1 - cti)^row, zero on defects
  std::vector<std::pair<int, int>> defects_;
  std::vector<std::uint32_t> defect_index_;
  std::vector<std::uint8_t> exclusion_;
  std::vector<float> noise_table_;
};

/// Convenience: the raw-frame output of detector_response for a whole event list.
struct RawFrameSet {
  int width = 0;
  int height = 0;
  double adu_per_kev = 0.0;
  std::vector<std::vector<std::uint16_t>> frames;
};

RawFrameSet detector_response(const std::vector<TrueEvent>& events, std::int64_t frame_count,
                              const DetectorModel& model);

}  // namespace xspdc
