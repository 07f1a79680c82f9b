#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "xspdc/config.hpp"
#include "xspdc/events.hpp"

namespace xspdc {

/// Detector calibration used to invert the raw readout.
struct CalibrationSet {
  int width = 0;
  int height = 0;
  std::vector<float> gain;   ///< per pixel, row-major
  std::vector<double> cti;   ///< per column, loss fraction per row transfer
  double noise_rms_adu = 2.0;
  double threshold_sigma = 5.0;
  /// Final exclusion mask (1 = excluded): defects and their neighbours plus the border.
  std::vector<std::uint8_t> mask;
  double adu_per_kev = 100.0;
  bool allow_straight_triples = false;

  /// Unit gain, zero CTI, border-only mask.
  static CalibrationSet identity(int width, int height, double adu_per_kev);

  double threshold_adu() const { return threshold_sigma * noise_rms_adu; }
  bool masked(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }
  void validate() const;

  /// 1 / (gain * (1 - cti)^row), zero on masked pixels.
  std::vector<float> inverse_response() const;
};

/// Exclusion mask from a defect list: each defect plus its 8 neighbours, and
/// `border` pixels along every detector edge.
std::vector<std::uint8_t> build_exclusion_mask(int width, int height,
                                               const std::vector<std::pair<int, int>>& defects, int border = 1);

/// Defect pixels covering whole rows and columns.
std::vector<std::pair<int, int>> line_defects(int width, int height, const std::vector<std::int64_t>& rows,
                                              const std::vector<std::int64_t>& cols);

/// Corrected frame; masked pixels carry the ignore sentinel (negative).
struct CorrectedFrame {
  int width = 0;
  int height = 0;
  std::vector<float> adu;
};

inline constexpr float kIgnoredPixel = -1.0f;

CorrectedFrame correct_frame(const std::vector<std::uint16_t>& raw, int width, int height,
                             const CalibrationSet& cal);
/// Same, reusing a precomputed inverse_response() and output buffer.
void correct_frame_into(const std::uint16_t* raw, const std::vector<float>& inverse, CorrectedFrame& out);

enum class Topology : std::uint8_t { single, dual, triple, quad, rejected };

struct ClusterPixel {
  int x = 0;
  int y = 0;
  float adu = 0.0f;
};

struct Cluster {
  std::vector<ClusterPixel> pixels;
  double cx = 0.0;
  double cy = 0.0;
  double total_adu = 0.0;
  Topology topology = Topology::rejected;

  bool accepted() const { return topology != Topology::rejected; }
};

/// 4-connected clusters of above-threshold pixels with topology classes.
/// Oversized or misshapen clusters are rejected, as is any cluster touching a
/// masked pixel; valid clusters inside the 8-neighbour halo of a rejected one
/// are rejected too.
std::vector<Cluster> extract_clusters(const CorrectedFrame& frame, const CalibrationSet& cal);

/// Accepted clusters as events: charge-weighted centroid, energy from ADU.
EventList clusters_to_events(const std::vector<Cluster>& clusters, const CalibrationSet& cal,
                             std::int64_t frame_id);

/// Frame-local reconstruction with reusable scratch buffers.
class FrameReconstructor {
 public:
  explicit FrameReconstructor(const CalibrationSet& cal);
  void process(const std::uint16_t* raw, std::int64_t frame_id, EventList& out);

 private:
  CalibrationSet cal_;
  std::vector<float> inverse_;
  CorrectedFrame frame_;
};

/// Calibration from `recon.*` keys and the sidecar files written by synth.
CalibrationSet calibration_from(const KeyValueConfig& cfg, int width, int height, double adu_per_kev,
                                const std::string& gain_path, const std::string& cti_path,
                                const std::string& mask_path);

}  // namespace xspdc
