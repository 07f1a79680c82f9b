#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "xspdc/analysis.hpp"
#include "xspdc/config.hpp"
#include "xspdc/geometry.hpp"
#include "xspdc/pairs.hpp"
#include "xspdc/simulator.hpp"
#include "xspdc/synth.hpp"

namespace xspdc {

inline constexpr const char* kToolVersion = "0.1.0";

enum class Stage { simulate, synth, recon, extract, analyze };

Stage parse_stage(const std::string& name);
std::string stage_name(Stage s);
/// `all` expands to every stage in order.
std::vector<Stage> parse_stage_list(const std::string& name);

enum class SynthOutput { raw, events };

struct ExtractSettings {
  ScanConfig scan;
  double threshold_fraction = 0.2;
  /// Annulus kept clear for the accidental estimate: predicted ring radii
  /// widened by this margin (reference px).
  double signal_free_margin_px = 12.0;
  std::optional<ControlMode> control;
  std::uint64_t control_seed = 1;
};

struct AnalyzeSettings {
  int rebin = 4;
  double bin_px = 8.0;
  RadiusMethod method = RadiusMethod::fwhm_entries;
  bool weighted = false;
};

/// Every section of a run configuration, read and checked up front.
struct PipelineConfig {
  std::filesystem::path config_path;
  KeyValueConfig raw;
  ExperimentGeometry geometry;
  std::vector<WindowPair> windows;
  SimConfig simulate;
  SynthConfig synth;
  SynthOutput synth_output = SynthOutput::raw;
  std::uint32_t suppress_adu = 6;
  ExtractSettings extract;
  AnalyzeSettings analyze;
  std::filesystem::path output_root = "runs";

  /// Hash of the canonical configuration, output location excluded.
  std::string hash() const;
  std::filesystem::path run_dir() const;
};

/// Parses `text`, applies overrides in order, and validates. Throws ConfigError.
PipelineConfig pipeline_config(const KeyValueConfig& cfg, const std::filesystem::path& origin = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// Result of one `run` call.
struct RunResult {
  int exit_code = 0;
  std::filesystem::path run_dir;
  bool no_signal = false;
};

/// Runs the stages in order inside the run directory and updates its
/// manifest. Errors propagate as exceptions.
RunResult run_stages(const PipelineConfig& cfg, const std::vector<Stage>& stages);

/// Artifact paths relative to the run directory.
namespace artifact {
std::filesystem::path map_stem(std::size_t k);
inline constexpr const char* kSimulateSummary = "simulate/summary.json";
inline constexpr const char* kRawFrames = "synth/frames.pncf";
inline constexpr const char* kSynthEvents = "synth/events.csv";
inline constexpr const char* kSynthSummary = "synth/summary.json";
inline constexpr const char* kGain = "synth/gain.csv";
inline constexpr const char* kCti = "synth/cti.csv";
inline constexpr const char* kMask = "synth/mask.csv";
inline constexpr const char* kEvents = "recon/events.csv";
inline constexpr const char* kReconSummary = "recon/summary.json";
inline constexpr const char* kExtractSummary = "extract/summary.json";
std::filesystem::path pairs_csv(std::size_t k);
std::filesystem::path retained_map(std::size_t k);
inline constexpr const char* kAnalyzeDir = "analyze";
inline constexpr const char* kManifest = "manifest.json";
}  // namespace artifact

/// `frame_id,ax,ay,ae_ev,bx,by,be_ev`
void write_pairs_csv(const std::filesystem::path& path, const std::vector<CoincidencePair>& pairs,
                     const std::vector<std::uint32_t>& which);
std::vector<CoincidencePair> read_pairs_csv(const std::filesystem::path& path);

/// Maps error types onto CLI exit codes: 2 config, 3 data format, 1 otherwise.
int exit_code_for(const std::exception& e);
std::string error_json(const std::exception& e, int code);

}  // namespace xspdc
