#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xspdc/config.hpp"
#include "xspdc/events.hpp"
#include "xspdc/geometry.hpp"
#include "xspdc/simulator.hpp"

namespace xspdc {

enum class Side : std::uint8_t { A, B };

/// Rectangular scan region; (x0, y0) is the top-left pixel.
struct RegionSpec {
  Side side = Side::A;
  int x0 = 0;
  int y0 = 0;
  int width = 0;
  int height = 0;

  bool contains(int x, int y) const { return x >= x0 && y >= y0 && x < x0 + width && y < y0 + height; }
  int area() const { return width * height; }
};

/// Half-plane split and scan parameters.
struct ScanConfig {
  int a_size = 8;
  int a_stride = 4;
  int b_size = 16;
  int b_stride = 8;
  double tolerance_ev = 400.0;
  /// Count every photon, not just energy candidates, for the exactly-one rule.
  bool strict = false;
  /// Columns right of the boundary excluded from side B.
  int boundary_gap = 0;

  void validate() const;
};

ScanConfig scan_config_from(const KeyValueConfig& cfg, const std::string& prefix = "extract.");

/// Region lists plus a per-pixel lookup of the regions covering each pixel.
class RegionLattice {
 public:
  RegionLattice(const ExperimentGeometry& geom, std::vector<RegionSpec> a, std::vector<RegionSpec> b);

  /// Regions of the given size advanced by `stride` across each half-plane.
  static RegionLattice scan(const ExperimentGeometry& geom, const ScanConfig& cfg);

  const std::vector<RegionSpec>& a() const { return a_; }
  const std::vector<RegionSpec>& b() const { return b_; }
  std::size_t cells() const { return a_.size() * b_.size(); }

  /// Region indices covering a pixel on the given side (empty off-lattice).
  const std::vector<std::uint32_t>& covering(Side side, int x, int y) const;

  /// Excluded pixels (1 = dead, row-major). Region measures then count live pixels only.
  void set_exclusion(const std::vector<std::uint8_t>& mask);
  bool live(int x, int y) const { return exclusion_.empty() || !exclusion_[static_cast<std::size_t>(y) * width_ + x]; }
  double live_fraction(const RegionSpec& r) const;

 private:
  int width_;
  int height_;
  std::vector<RegionSpec> a_;
  std::vector<RegionSpec> b_;
  std::vector<std::vector<std::uint32_t>> a_lookup_;
  std::vector<std::vector<std::uint32_t>> b_lookup_;
  std::vector<std::uint32_t> empty_;
  std::vector<std::uint8_t> exclusion_;
};

/// First column of side B.
int side_b_first_column(const ExperimentGeometry& geom, int boundary_gap);

struct CandidateSplit {
  EventList a;  ///< high-energy window, A half-plane
  EventList b;  ///< low-energy window, B half-plane
};

/// Events kept by energy window and half-plane; order is preserved.
CandidateSplit prefilter_split(const EventList& events, double pump_energy_kev, const ExperimentGeometry& geom,
                               const WindowPair& windows, int boundary_gap = 0);

struct CoincidencePair {
  std::int64_t frame_id = 0;
  PhotonEvent a;
  PhotonEvent b;
};

struct AccidentalEstimate {
  double rate_per_hour = 0.0;  ///< per (A region, B region) pair
  double stderr_per_hour = 0.0;
  std::int64_t counts = 0;
  std::int64_t region_pairs = 0;
  double live_region_pairs = 0.0;  ///< region pairs weighted by their live-pixel fractions
  double exposure_h = 0.0;
  bool low_statistics = false;  ///< fewer than 10 counts
};

struct ThresholdSummary {
  double fraction = 0.2;
  double level = 0.0;
  std::uint32_t max_count = 0;
  std::int64_t retained_cells = 0;
  std::int64_t retained_pairs = 0;
  /// Union of retained cells in units of one region pair's A x B pixel measure.
  double covered_region_pairs = 0.0;
  double expected_accidentals = 0.0;
  double true_pairs = 0.0;
  double retained_rate_per_hour = 0.0;
  double true_rate_per_hour = 0.0;
  double true_rate_stderr = 0.0;
  double contrast = 0.0;
  bool all_below = false;
};

/// Per-cell coincidence counts, unique pairs and the cells each pair hit.
struct PairMap {
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::vector<std::uint32_t> counts;  ///< n_a * n_b, A-major
  std::vector<CoincidencePair> pairs;
  std::vector<std::uint32_t> hit_offsets;  ///< pairs.size() + 1 entries into hit_cells
  std::vector<std::uint32_t> hit_cells;
  double exposure_h = 0.0;
  std::int64_t frames = 0;

  std::vector<std::uint8_t> retained_cells;  ///< after threshold_subtract
  std::vector<std::uint32_t> retained_pairs;
  ThresholdSummary threshold;
  AccidentalEstimate accidentals;
};

/// Incremental region scan. Frames are fed in increasing order.
class CoincidenceScanner {
 public:
  CoincidenceScanner(const RegionLattice& lattice, const ScanConfig& cfg, double pump_energy_kev);

  /// Candidates of one frame; `all_a`/`all_b` are every photon on each side
  /// (only used in strict mode).
  void add_frame(std::int64_t frame_id, const PhotonEvent* a, std::size_t na, const PhotonEvent* b, std::size_t nb,
                 const PhotonEvent* all = nullptr, std::size_t nall = 0);

  PairMap finish(std::int64_t frames, double exposure_h);

 private:
  void occupy(Side side, const PhotonEvent& e, int candidate_index);

  const RegionLattice& lattice_;
  ScanConfig cfg_;
  std::int64_t pump_ev_;
  PairMap map_;
  std::vector<std::int32_t> a_slot_, b_slot_;  // -1 empty, >= 0 single candidate, -2 several
  std::vector<std::uint32_t> a_touched_, b_touched_;
  std::vector<std::uint64_t> frame_hits_;
};

/// Splits a whole event list by frame and scans it.
PairMap scan_coincidences(const EventList& all_events, const CandidateSplit& candidates, const RegionLattice& lattice,
                          const ScanConfig& cfg, double pump_energy_kev, std::int64_t frames, double exposure_h);

/// Non-overlapping tilings (stride = size) of both half-planes that stay
/// clear of the annulus [r_inner, r_outer] (reference px) around the ring centre.
RegionLattice signal_free_regions(const ExperimentGeometry& geom, const ScanConfig& cfg, double r_inner_px,
                                  double r_outer_px);

/// Accidental rate per fully live region pair from signal-free regions.
AccidentalEstimate estimate_accidentals(const EventList& all_events, const CandidateSplit& candidates,
                                        const RegionLattice& signal_free, const ScanConfig& cfg,
                                        double pump_energy_kev, std::int64_t frames, double exposure_h);

/// Keeps cells at or above fraction * max, deduplicates their pairs and
/// subtracts the accidental expectation over the covered measure.
void threshold_subtract(PairMap& map, const RegionLattice& lattice, double fraction,
                        const AccidentalEstimate& accidentals);

enum class ControlMode { frame_shuffle, energy_randomize };

/// Decorrelated copy of an event list, sorted by frame.
EventList decorrelate(const EventList& events, ControlMode mode, std::uint64_t seed, std::int64_t frames);

/// Observed pairs in a fixed set of cells versus the accidental expectation.
struct RegionExcess {
  std::int64_t observed = 0;
  double expected = 0.0;
  double significance = 0.0;  ///< (observed - expected) / sqrt(expected)
};
RegionExcess region_excess(const PairMap& map, const RegionLattice& lattice, const std::vector<std::uint8_t>& cells,
                           const AccidentalEstimate& accidentals);

/// Retained pairs accumulated on the detector grid (both members).
std::vector<double> retained_pair_image(const PairMap& map, int width, int height);

}  // namespace xspdc
