#include "xspdc/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"
#include "xspdc/error.hpp"
#include "xspdc/io.hpp"
#include "xspdc/parallel.hpp"
#include "xspdc/recon.hpp"

namespace xspdc {

namespace fs = std::filesystem;
using json = nlohmann::json;

Stage parse_stage(const std::string& name) {
  if (name == "simulate") return Stage::simulate;
  if (name == "synth") return Stage::synth;
  if (name == "recon") return Stage::recon;
  if (name == "extract") return Stage::extract;
  if (name == "analyze") return Stage::analyze;
  throw ConfigError("unknown stage '" + name + "'");
}

std::string stage_name(Stage s) {
  switch (s) {
    case Stage::simulate: return "simulate";
    case Stage::synth: return "synth";
    case Stage::recon: return "recon";
    case Stage::extract: return "extract";
    case Stage::analyze: return "analyze";
  }
  return "?";
}

std::vector<Stage> parse_stage_list(const std::string& name) {
  if (name == "all") return {Stage::simulate, Stage::synth, Stage::recon, Stage::extract, Stage::analyze};
  return {parse_stage(name)};
}

namespace artifact {
fs::path map_stem(std::size_t k) { return fs::path("simulate") / ("map_" + std::to_string(k)); }
fs::path pairs_csv(std::size_t k) { return fs::path("extract") / ("pairs_" + std::to_string(k) + ".csv"); }
fs::path retained_map(std::size_t k) { return fs::path("extract") / ("retained_map_" + std::to_string(k) + ".csv"); }
}  // namespace artifact

PipelineConfig pipeline_config(const KeyValueConfig& cfg, const fs::path& origin) {
  PipelineConfig p;
  p.config_path = origin;
  p.raw = cfg;
  p.geometry = geometry_from_config(cfg, "geometry.");

  p.windows = WindowPair::parse_list(cfg.get_string("simulate.windows", ""));
  if (p.windows.empty()) throw ConfigError("simulate.windows lists no window pairs");
  for (const auto& w : p.windows) w.check_conjugate(p.geometry.pump_energy_kev);
  p.simulate = sim_config_from(cfg, "simulate.");

  p.synth = synth_config_from(cfg, "synth.");
  if (p.synth.pair_rates_per_hour.size() == 1 && p.windows.size() > 1) {
    p.synth.pair_rates_per_hour.assign(p.windows.size(), p.synth.pair_rates_per_hour.front());
  }
  if (p.synth.pair_rates_per_hour.empty()) p.synth.pair_rates_per_hour.assign(p.windows.size(), 0.0);
  if (p.synth.pair_rates_per_hour.size() != p.windows.size()) {
    throw ConfigError("synth.pair_rates_per_hour needs one value or one per window pair");
  }
  p.synth.validate(p.geometry);
  const auto out = cfg.get_string("synth.output", "raw");
  if (out == "raw") {
    p.synth_output = SynthOutput::raw;
  } else if (out == "events") {
    p.synth_output = SynthOutput::events;
  } else {
    throw ConfigError("synth.output must be raw or events");
  }
  const auto suppress = cfg.get_int("synth.suppress_adu", p.suppress_adu);
  if (suppress < 0 || suppress > 65535) throw ConfigError("synth.suppress_adu must be in [0, 65535]");
  p.suppress_adu = static_cast<std::uint32_t>(suppress);

  // Reads and checks the recon.* keys; the sidecar files are loaded by the stage.
  (void)calibration_from(cfg, p.geometry.n_cols, p.geometry.n_rows, p.synth.adu_per_kev, "", "", "");

  auto& e = p.extract;
  e.scan = scan_config_from(cfg, "extract.");
  e.threshold_fraction = cfg.get_double("extract.threshold_fraction", e.threshold_fraction);
  if (!(e.threshold_fraction > 0.0) || e.threshold_fraction > 1.0) {
    throw ConfigError("extract.threshold_fraction must be in (0, 1]");
  }
  e.signal_free_margin_px = cfg.get_double("extract.signal_free_margin_px", e.signal_free_margin_px);
  if (!(e.signal_free_margin_px >= 0.0)) throw ConfigError("extract.signal_free_margin_px must be >= 0");
  const auto control = cfg.get_string("extract.control", "none");
  if (control == "frame_shuffle") {
    e.control = ControlMode::frame_shuffle;
  } else if (control == "energy_randomize") {
    e.control = ControlMode::energy_randomize;
  } else if (control != "none") {
    throw ConfigError("extract.control must be none, frame_shuffle or energy_randomize");
  }
  e.control_seed = static_cast<std::uint64_t>(cfg.get_int("extract.control_seed", 1));

  auto& a = p.analyze;
  a.rebin = static_cast<int>(cfg.get_int("analyze.rebin", a.rebin));
  a.bin_px = cfg.get_double("analyze.bin_px", a.bin_px);
  if (a.rebin < 1) throw ConfigError("analyze.rebin must be >= 1");
  if (!(a.bin_px > 0.0)) throw ConfigError("analyze.bin_px must be > 0");
  const auto method = cfg.get_string("analyze.radius_method", "fwhm_entries");
  if (method == "fwhm_entries") {
    a.method = RadiusMethod::fwhm_entries;
  } else if (method == "half_max_bins") {
    a.method = RadiusMethod::half_max_bins;
  } else {
    throw ConfigError("analyze.radius_method must be fwhm_entries or half_max_bins");
  }
  a.weighted = cfg.get_bool("analyze.weighted", a.weighted);

  p.output_root = cfg.get_string("run.output_root", "runs");
  cfg.reject_unconsumed();
  return p;
}

PipelineConfig load_pipeline_config(const fs::path& path, const std::vector<std::string>& overrides) {
  if (!fs::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
  auto cfg = KeyValueConfig::load(path);
  for (const auto& o : overrides) cfg.apply_override(o);
  return pipeline_config(cfg, path);
}

std::string PipelineConfig::hash() const {
  KeyValueConfig c;
  for (const auto& [k, v] : raw.entries()) {
    if (k != "run.output_root") c.set(k, v);
  }
  return hex64(fnv1a64(c.canonical()));
}

fs::path PipelineConfig::run_dir() const { return output_root / ("run-" + hash()); }

void write_pairs_csv(const fs::path& path, const std::vector<CoincidencePair>& pairs,
                     const std::vector<std::uint32_t>& which) {
  std::string text = "frame_id,ax,ay,ae_ev,bx,by,be_ev\n";
  char buf[128];
  for (auto i : which) {
    const auto& p = pairs[i];
    const int len = std::snprintf(buf, sizeof buf, "%lld,%d,%d,%lld,%d,%d,%lld\n", static_cast<long long>(p.frame_id),
                                  p.a.x, p.a.y, static_cast<long long>(p.a.energy_ev()), p.b.x, p.b.y,
                                  static_cast<long long>(p.b.energy_ev()));
    text.append(buf, static_cast<std::size_t>(len));
  }
  write_text_file(path, text);
}

std::vector<CoincidencePair> read_pairs_csv(const fs::path& path) {
  const auto text = read_text_file(path);
  std::vector<CoincidencePair> out;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line_no == 1) {
      if (line != "frame_id,ax,ay,ae_ev,bx,by,be_ev") throw FormatError(path.string() + ": unexpected pair header");
      continue;
    }
    if (line.empty()) continue;
    long long v[7];
    const char* p = line.data();
    const char* e = line.data() + line.size();
    for (int k = 0; k < 7; ++k) {
      const auto r = std::from_chars(p, e, v[k]);
      if (r.ec != std::errc() || (k < 6 && (r.ptr == e || *r.ptr != ',')) || (k == 6 && r.ptr != e)) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed pair row");
      }
      p = r.ptr + 1;
    }
    CoincidencePair c;
    c.frame_id = v[0];
    auto photon = [&](long long x, long long y, long long ev) {
      PhotonEvent ph;
      ph.frame_id = v[0];
      ph.x = static_cast<int>(x);
      ph.y = static_cast<int>(y);
      ph.cx = static_cast<double>(x);
      ph.cy = static_cast<double>(y);
      ph.energy_kev = static_cast<double>(ev) * 1e-3;
      return ph;
    };
    c.a = photon(v[1], v[2], v[3]);
    c.b = photon(v[4], v[5], v[6]);
    out.push_back(c);
  }
  if (line_no == 0) throw FormatError(path.string() + ": empty pair file");
  return out;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const WindowMismatchError*>(&e) ||
      dynamic_cast<const DomainError*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const FormatError*>(&e)) return 3;
  return 1;
}

std::string error_json(const std::exception& e, int code) {
  std::string kind = "error";
  if (dynamic_cast<const DimensionError*>(&e)) {
    kind = "dimension_error";
  } else if (dynamic_cast<const FormatError*>(&e)) {
    kind = "format_error";
  } else if (dynamic_cast<const ConfigError*>(&e)) {
    kind = "config_error";
  } else if (dynamic_cast<const WindowMismatchError*>(&e)) {
    kind = "window_mismatch";
  } else if (dynamic_cast<const DomainError*>(&e)) {
    kind = "domain_error";
  }
  return json{{"error", kind}, {"message", e.what()}, {"exit_code", code}}.dump() + "\n";
}

namespace {

constexpr std::size_t kFrameBatch = 256;

struct StageRecord {
  std::map<std::string, std::string> inputs;
  std::map<std::string, std::string> outputs;
};

class StageContext {
 public:
  StageContext(const PipelineConfig& cfg, fs::path dir) : cfg_(cfg), dir_(std::move(dir)) {}

  const PipelineConfig& cfg() const { return cfg_; }
  fs::path path(const fs::path& rel) const { return dir_ / rel; }

  /// Declares an input; throws FormatError when it is missing.
  fs::path input(const fs::path& rel) {
    const auto p = path(rel);
    if (!fs::exists(p)) throw FormatError("missing input " + p.string() + " (run the producing stage first)");
    record_.inputs[rel.generic_string()] = file_hash(p);
    return p;
  }
  fs::path output(const fs::path& rel) {
    const auto p = path(rel);
    outputs_.push_back(rel);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
  }
  StageRecord finish() {
    for (const auto& rel : outputs_) record_.outputs[rel.generic_string()] = file_hash(path(rel));
    return record_;
  }

 private:
  const PipelineConfig& cfg_;
  fs::path dir_;
  StageRecord record_;
  std::vector<fs::path> outputs_;
};

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text_file(p));
  } catch (const json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) { write_text_file(p, j.dump(2) + "\n"); }

std::vector<FarFieldMap> read_maps(StageContext& ctx) {
  std::vector<FarFieldMap> maps;
  const auto& g = ctx.cfg().geometry;
  for (std::size_t k = 0; k < ctx.cfg().windows.size(); ++k) {
    const auto stem = artifact::map_stem(k);
    ctx.input(fs::path(stem.string() + ".csv"));
    ctx.input(fs::path(stem.string() + ".json"));
    auto m = read_map(ctx.path(stem));
    if (m.width != g.n_cols || m.height != g.n_rows) throw DimensionError("map " + stem.string() + " has the wrong size");
    if (m.windows.label() != ctx.cfg().windows[k].label()) {
      throw FormatError("map " + stem.string() + " is for windows " + m.windows.label());
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

void run_simulate(StageContext& ctx) {
  const auto& c = ctx.cfg();
  json windows = json::array();
  for (std::size_t k = 0; k < c.windows.size(); ++k) {
    const auto map = far_field_map(c.geometry, c.windows[k], c.simulate);
    const auto stem = artifact::map_stem(k);
    for (const char* ext : {".csv", ".json", ".pgm"}) ctx.output(fs::path(stem.string() + ext));
    write_map(ctx.path(stem), map);
    json w{{"windows", c.windows[k].label()}, {"raw_peak", map.raw_peak}};
    try {
      w["predicted_signal_radius_px"] = ring_radius_predicted(c.geometry, c.windows[k].signal.center());
      w["predicted_idler_radius_px"] = ring_radius_predicted(c.geometry, c.windows[k].idler.center());
    } catch (const DomainError&) {
    }
    windows.push_back(w);
  }
  const auto fp = footprint_estimate(c.geometry, c.simulate);
  json s{{"geometry_hash", c.geometry.hash()},
         {"bragg_angle_deg", c.geometry.bragg_angle_rad() * 180.0 / 3.14159265358979323846},
         {"footprint_fwhm_px", fp.fwhm_px},
         {"footprint_fwhm_mm", fp.fwhm_mm},
         {"windows", windows}};
  write_json(ctx.output(artifact::kSimulateSummary), s);
}

void run_synth(StageContext& ctx) {
  const auto& c = ctx.cfg();
  const auto maps = read_maps(ctx);
  EventGenerator gen(c.geometry, c.synth, maps);
  DetectorModel det(c.geometry, c.synth);
  const std::int64_t frames = gen.frame_count();

  std::vector<double> gain(det.gain().begin(), det.gain().end());
  write_matrix_csv(ctx.output(artifact::kGain), det.width(), det.height(), gain);
  write_cti_csv(ctx.output(artifact::kCti), det.cti());
  write_mask_csv(ctx.output(artifact::kMask), det.defects());

  std::int64_t pair_photons = 0, background = 0, detected = 0;
  const std::size_t n = static_cast<std::size_t>(det.width()) * det.height();
  std::vector<std::vector<TrueEvent>> truth(kFrameBatch);
  auto count = [&](std::size_t m) {
    for (std::size_t i = 0; i < m; ++i) {
      for (const auto& e : truth[i]) (e.origin == Origin::background ? background : pair_photons) += 1;
    }
  };

  if (c.synth_output == SynthOutput::raw) {
    RawFrameWriter writer(ctx.output(artifact::kRawFrames), static_cast<std::uint32_t>(det.width()),
                          static_cast<std::uint32_t>(det.height()), det.adu_per_kev(), c.suppress_adu);
    std::vector<std::uint16_t> frames_buf(kFrameBatch * n);
    for (std::int64_t f0 = 0; f0 < frames; f0 += kFrameBatch) {
      const auto m = static_cast<std::size_t>(std::min<std::int64_t>(kFrameBatch, frames - f0));
      parallel_chunks(m, [&](std::size_t b, std::size_t e) {
        std::vector<std::uint16_t> raw;
        for (std::size_t i = b; i < e; ++i) {
          truth[i].clear();
          gen.frame_events(f0 + static_cast<std::int64_t>(i), truth[i]);
          det.render(f0 + static_cast<std::int64_t>(i), truth[i], raw);
          std::copy(raw.begin(), raw.end(), frames_buf.begin() + static_cast<std::ptrdiff_t>(i * n));
        }
      });
      count(m);
      for (std::size_t i = 0; i < m; ++i) writer.write(frames_buf.data() + i * n);
    }
    writer.close();
  } else {
    EventList events;
    std::vector<EventList> parts(kFrameBatch);
    for (std::int64_t f0 = 0; f0 < frames; f0 += kFrameBatch) {
      const auto m = static_cast<std::size_t>(std::min<std::int64_t>(kFrameBatch, frames - f0));
      parallel_chunks(m, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          truth[i].clear();
          parts[i].clear();
          gen.frame_events(f0 + static_cast<std::int64_t>(i), truth[i]);
          det.fast_events(f0 + static_cast<std::int64_t>(i), truth[i], parts[i]);
        }
      });
      count(m);
      for (std::size_t i = 0; i < m; ++i) events.insert(events.end(), parts[i].begin(), parts[i].end());
    }
    detected = static_cast<std::int64_t>(events.size());
    write_events_csv(ctx.output(artifact::kSynthEvents), events);
  }

  json s{{"frames", frames},
         {"frame_rate_hz", c.synth.frame_rate_hz},
         {"exposure_h", c.synth.exposure_h(frames)},
         {"output", c.synth_output == SynthOutput::raw ? "raw" : "events"},
         {"suppress_adu", c.synth_output == SynthOutput::raw ? c.suppress_adu : 0},
         {"pair_photons", pair_photons},
         {"background_photons", background},
         {"seed", c.synth.rng_seed}};
  if (c.synth_output == SynthOutput::events) s["detected_events"] = detected;
  write_json(ctx.output(artifact::kSynthSummary), s);
}

void run_recon(StageContext& ctx) {
  const auto& c = ctx.cfg();
  const auto synth = read_json(ctx.input(artifact::kSynthSummary));
  const std::int64_t frames = synth.at("frames").get<std::int64_t>();
  const double exposure_h = synth.at("exposure_h").get<double>();
  EventList events;

  if (synth.at("output").get<std::string>() == "raw") {
    RawFrameReader reader(ctx.input(artifact::kRawFrames));
    const auto& h = reader.header();
    if (static_cast<int>(h.width) != c.geometry.n_cols || static_cast<int>(h.height) != c.geometry.n_rows) {
      throw DimensionError("raw frames are " + std::to_string(h.width) + "x" + std::to_string(h.height) +
                           ", detector is " + std::to_string(c.geometry.n_cols) + "x" +
                           std::to_string(c.geometry.n_rows));
    }
    if (static_cast<std::int64_t>(h.frame_count) != frames) throw FormatError("raw frame count disagrees with synth summary");
    const auto cal = calibration_from(c.raw, c.geometry.n_cols, c.geometry.n_rows, h.adu_per_kev,
                                      ctx.input(artifact::kGain).string(), ctx.input(artifact::kCti).string(),
                                      ctx.input(artifact::kMask).string());
    if (h.sparse()) {
      // Zero suppression must not hide any pixel the threshold would keep.
      const auto inv = cal.inverse_response();
      float max_inv = 0.0f;
      for (float v : inv) max_inv = std::max(max_inv, v);
      if (max_inv > 0.0f && static_cast<double>(h.suppress_adu - 1) * max_inv >= cal.threshold_adu()) {
        throw ConfigError("zero-suppression level " + std::to_string(h.suppress_adu) +
                          " ADU can hide pixels above the reconstruction threshold");
      }
    }
    const std::size_t n = h.frame_pixels();
    std::vector<std::uint16_t> buf(kFrameBatch * n), frame;
    std::vector<EventList> parts(kFrameBatch);
    std::int64_t f0 = 0;
    while (true) {
      std::size_t m = 0;
      while (m < kFrameBatch && reader.next(frame)) {
        std::copy(frame.begin(), frame.end(), buf.begin() + static_cast<std::ptrdiff_t>(m * n));
        ++m;
      }
      if (m == 0) break;
      parallel_chunks(m, [&](std::size_t b, std::size_t e) {
        FrameReconstructor rec(cal);
        for (std::size_t i = b; i < e; ++i) {
          parts[i].clear();
          rec.process(buf.data() + i * n, f0 + static_cast<std::int64_t>(i), parts[i]);
        }
      });
      for (std::size_t i = 0; i < m; ++i) events.insert(events.end(), parts[i].begin(), parts[i].end());
      f0 += static_cast<std::int64_t>(m);
    }
  } else {
    events = read_events_csv(ctx.input(artifact::kSynthEvents));
    for (const auto& e : events) {
      if (!c.geometry.inside(e.x, e.y)) throw DimensionError("event outside the detector");
      if (e.frame_id < 0 || e.frame_id >= frames) throw FormatError("event frame id outside the run");
    }
  }
  write_events_csv(ctx.output(artifact::kEvents), events);
  json s{{"frames", frames}, {"exposure_h", exposure_h}, {"events", events.size()},
         {"events_per_frame", frames > 0 ? static_cast<double>(events.size()) / static_cast<double>(frames) : 0.0}};
  write_json(ctx.output(artifact::kReconSummary), s);
}

json threshold_json(const ThresholdSummary& t) {
  return json{{"fraction", t.fraction},
              {"level", t.level},
              {"max_count", t.max_count},
              {"retained_cells", t.retained_cells},
              {"retained_pairs", t.retained_pairs},
              {"covered_region_pairs", t.covered_region_pairs},
              {"expected_accidentals", t.expected_accidentals},
              {"true_pairs", t.true_pairs},
              {"retained_rate_per_hour", t.retained_rate_per_hour},
              {"true_rate_per_hour", t.true_rate_per_hour},
              {"true_rate_stderr", t.true_rate_stderr},
              {"contrast", t.contrast},
              {"all_below", t.all_below}};
}

ThresholdSummary threshold_from(const json& j) {
  ThresholdSummary t;
  t.fraction = j.at("fraction").get<double>();
  t.level = j.at("level").get<double>();
  t.max_count = j.at("max_count").get<std::uint32_t>();
  t.retained_cells = j.at("retained_cells").get<std::int64_t>();
  t.retained_pairs = j.at("retained_pairs").get<std::int64_t>();
  t.covered_region_pairs = j.at("covered_region_pairs").get<double>();
  t.expected_accidentals = j.at("expected_accidentals").get<double>();
  t.true_pairs = j.at("true_pairs").get<double>();
  t.retained_rate_per_hour = j.at("retained_rate_per_hour").get<double>();
  t.true_rate_per_hour = j.at("true_rate_per_hour").get<double>();
  t.true_rate_stderr = j.at("true_rate_stderr").get<double>();
  t.contrast = j.at("contrast").get<double>();
  t.all_below = j.at("all_below").get<bool>();
  return t;
}

json accidentals_json(const AccidentalEstimate& a) {
  return json{{"rate_per_hour", a.rate_per_hour},   {"stderr_per_hour", a.stderr_per_hour},
              {"counts", a.counts},                 {"region_pairs", a.region_pairs},
              {"live_region_pairs", a.live_region_pairs},
              {"exposure_h", a.exposure_h},         {"low_statistics", a.low_statistics}};
}

AccidentalEstimate accidentals_from(const json& j) {
  AccidentalEstimate a;
  a.rate_per_hour = j.at("rate_per_hour").get<double>();
  a.stderr_per_hour = j.at("stderr_per_hour").get<double>();
  a.counts = j.at("counts").get<std::int64_t>();
  a.region_pairs = j.at("region_pairs").get<std::int64_t>();
  a.live_region_pairs = j.value("live_region_pairs", static_cast<double>(a.region_pairs));
  a.exposure_h = j.at("exposure_h").get<double>();
  a.low_statistics = j.at("low_statistics").get<bool>();
  return a;
}

/// Annulus holding every predicted ring of the configured windows.
std::pair<double, double> ring_band(const PipelineConfig& c) {
  double lo = 1e300, hi = 0.0;
  for (const auto& w : c.windows) {
    for (double e : {w.signal.center(), w.idler.center()}) {
      const double r = ring_radius_predicted(c.geometry, e);
      lo = std::min(lo, r);
      hi = std::max(hi, r);
    }
  }
  const double m = c.extract.signal_free_margin_px;
  return {std::max(0.0, lo - m), hi + m};
}

bool run_extract(StageContext& ctx) {
  const auto& c = ctx.cfg();
  const auto recon = read_json(ctx.input(artifact::kReconSummary));
  const std::int64_t frames = recon.at("frames").get<std::int64_t>();
  const double exposure_h = recon.at("exposure_h").get<double>();
  auto events = read_events_csv(ctx.input(artifact::kEvents));
  if (c.extract.control) events = decorrelate(events, *c.extract.control, c.extract.control_seed, frames);

  const auto mask = calibration_from(c.raw, c.geometry.n_cols, c.geometry.n_rows, c.synth.adu_per_kev, "", "",
                                     ctx.input(artifact::kMask).string())
                        .mask;
  auto lattice = RegionLattice::scan(c.geometry, c.extract.scan);
  lattice.set_exclusion(mask);
  const auto [r_in, r_out] = ring_band(c);
  auto free = signal_free_regions(c.geometry, c.extract.scan, r_in, r_out);
  free.set_exclusion(mask);
  const double pump = c.geometry.pump_energy_kev;

  json windows = json::array();
  bool any_signal = false;
  for (std::size_t k = 0; k < c.windows.size(); ++k) {
    const auto split = prefilter_split(events, pump, c.geometry, c.windows[k], c.extract.scan.boundary_gap);
    auto map = scan_coincidences(events, split, lattice, c.extract.scan, pump, frames, exposure_h);
    const auto acc = estimate_accidentals(events, split, free, c.extract.scan, pump, frames, exposure_h);
    threshold_subtract(map, lattice, c.extract.threshold_fraction, acc);
    any_signal = any_signal || !map.threshold.all_below;
    write_pairs_csv(ctx.output(artifact::pairs_csv(k)), map.pairs, map.retained_pairs);
    write_matrix_csv(ctx.output(artifact::retained_map(k)), c.geometry.n_cols, c.geometry.n_rows,
                     retained_pair_image(map, c.geometry.n_cols, c.geometry.n_rows));
    windows.push_back({{"windows", c.windows[k].label()},
                       {"candidates_a", split.a.size()},
                       {"candidates_b", split.b.size()},
                       {"coincidences", map.pairs.size()},
                       {"threshold", threshold_json(map.threshold)},
                       {"accidentals", accidentals_json(acc)},
                       {"pairs_file", artifact::pairs_csv(k).generic_string()}});
  }
  json s{{"frames", frames},
         {"exposure_h", exposure_h},
         {"control", c.extract.control ? (*c.extract.control == ControlMode::frame_shuffle ? "frame_shuffle"
                                                                                           : "energy_randomize")
                                       : "none"},
         {"signal_free_annulus_px", {r_in, r_out}},
         {"no_signal", !any_signal},
         {"windows", windows}};
  write_json(ctx.output(artifact::kExtractSummary), s);
  return !any_signal;
}

bool run_analyze(StageContext& ctx) {
  const auto& c = ctx.cfg();
  const auto summary = read_json(ctx.input(artifact::kExtractSummary));
  const auto& wj = summary.at("windows");
  if (wj.size() != c.windows.size()) throw FormatError("extract summary lists a different number of windows");
  AnalysisReport report;
  report.exposure_h = summary.at("exposure_h").get<double>();
  for (std::size_t k = 0; k < c.windows.size(); ++k) {
    if (wj[k].at("windows").get<std::string>() != c.windows[k].label()) {
      throw FormatError("extract summary window " + std::to_string(k) + " does not match the configuration");
    }
    PairMap m;
    m.pairs = read_pairs_csv(ctx.input(artifact::pairs_csv(k)));
    m.retained_pairs.resize(m.pairs.size());
    std::iota(m.retained_pairs.begin(), m.retained_pairs.end(), 0u);
    m.threshold = threshold_from(wj[k].at("threshold"));
    m.accidentals = accidentals_from(wj[k].at("accidentals"));
    m.exposure_h = report.exposure_h;
    auto r = analyze_window(m, c.windows[k], c.geometry, c.analyze.rebin, c.analyze.bin_px, c.analyze.method);
    r.configured_rate_per_hour = c.synth.pair_rates_per_hour[k];
    report.windows.push_back(std::move(r));
  }
  fit_scaling(report, c.analyze.weighted);
  const auto dir = ctx.path(artifact::kAnalyzeDir);
  for (const auto& p : write_report(dir, report, c.geometry)) ctx.output(fs::relative(p, ctx.path("")));
  bool any = false;
  for (const auto& w : report.windows) any = any || !w.no_signal;
  return !any;
}

void update_manifest(const PipelineConfig& cfg, const fs::path& dir, Stage stage, const StageRecord& rec) {
  const auto path = dir / artifact::kManifest;
  json m;
  if (fs::exists(path)) m = read_json(path);
  m["tool_version"] = kToolVersion;
  m["config_path"] = cfg.config_path.generic_string();
  m["config_hash"] = cfg.hash();
  m["seeds"] = {{"simulate", cfg.simulate.rng_seed}, {"synth", cfg.synth.rng_seed},
                {"extract_control", cfg.extract.control_seed}};
  auto& order = m["stage_list"];
  if (!order.is_array()) order = json::array();
  const auto name = stage_name(stage);
  if (std::find(order.begin(), order.end(), name) == order.end()) order.push_back(name);
  m["stages"][name] = {{"inputs", rec.inputs}, {"outputs", rec.outputs}, {"config_hash", cfg.hash()}};
  write_json(path, m);
}

}  // namespace

RunResult run_stages(const PipelineConfig& cfg, const std::vector<Stage>& stages) {
  RunResult res;
  res.run_dir = cfg.run_dir();
  fs::create_directories(res.run_dir);
  write_text_file(res.run_dir / "config.cfg", cfg.raw.canonical());
  for (Stage s : stages) {
    StageContext ctx(cfg, res.run_dir);
    switch (s) {
      case Stage::simulate: run_simulate(ctx); break;
      case Stage::synth: run_synth(ctx); break;
      case Stage::recon: run_recon(ctx); break;
      case Stage::extract: res.no_signal = run_extract(ctx); break;
      case Stage::analyze: res.no_signal = run_analyze(ctx); break;
    }
    update_manifest(cfg, res.run_dir, s, ctx.finish());
  }
  res.exit_code = res.no_signal ? 4 : 0;
  return res;
}

}  // namespace xspdc
