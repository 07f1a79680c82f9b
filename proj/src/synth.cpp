#include "xspdc/synth.hpp"

#include <algorithm>
#include <cmath>

#include "xspdc/constants.hpp"
#include "xspdc/error.hpp"
#include "xspdc/kernels.hpp"
#include "xspdc/special.hpp"

namespace xspdc {

namespace {

constexpr std::uint64_t kStreamEvents = 1;
constexpr std::uint64_t kStreamDetector = 2;
constexpr std::size_t kNoiseTable = std::size_t{1} << 20;

double normal_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }
double normal_pdf(double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * kPi); }
// Antiderivative of the normal CDF.
double normal_cdf_integral(double t) { return t * normal_cdf(t) + normal_pdf(t); }

std::size_t pick(const std::vector<double>& cdf, double u) {
  const double target = u * cdf.back();
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  return std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

}  // namespace

void BackgroundSpectrum::validate() const {
  if (edges_kev.size() < 2 || density.size() + 1 != edges_kev.size()) {
    throw ConfigError("background spectrum needs n+1 edges for n densities");
  }
  for (std::size_t i = 0; i + 1 < edges_kev.size(); ++i) {
    if (!(edges_kev[i + 1] > edges_kev[i])) throw ConfigError("background spectrum edges must increase");
  }
  if (!(edges_kev.front() > 0.0)) throw ConfigError("background spectrum must start above 0 keV");
  double total = 0.0;
  for (double d : density) {
    if (d < 0.0) throw ConfigError("background spectral density must be >= 0");
    total += d;
  }
  if (!(total > 0.0)) throw ConfigError("background spectrum is empty");
}

double BackgroundSpectrum::sample(CounterRng& rng) const {
  double total = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) total += density[i] * (edges_kev[i + 1] - edges_kev[i]);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const double mass = density[i] * (edges_kev[i + 1] - edges_kev[i]);
    if (u < mass || i + 1 == density.size()) {
      return edges_kev[i] + (edges_kev[i + 1] - edges_kev[i]) * std::min(u / mass, 1.0);
    }
    u -= mass;
  }
  return edges_kev.back();
}

double BackgroundSpectrum::window_probability(double lo, double hi, double sigma) const {
  double total = 0.0, hit = 0.0;
  for (std::size_t i = 0; i < density.size(); ++i) {
    const double a = edges_kev[i], b = edges_kev[i + 1];
    const double mass = density[i] * (b - a);
    total += mass;
    if (mass == 0.0) continue;
    double frac;
    if (sigma <= 0.0) {
      frac = std::max(0.0, std::min(b, hi) - std::max(a, lo)) / (b - a);
    } else {
      auto covered = [&](double c) {  // integral over e in [a, b] of Phi((c - e) / sigma)
        return sigma * (normal_cdf_integral((c - a) / sigma) - normal_cdf_integral((c - b) / sigma));
      };
      frac = (covered(hi) - covered(lo)) / (b - a);
    }
    hit += mass * frac;
  }
  return hit / total;
}

std::int64_t SynthConfig::frame_count() const { return std::llround(duration_h * 3600.0 * frame_rate_hz); }

void SynthConfig::validate(const ExperimentGeometry& geom) const {
  if (!(frame_rate_hz > 0.0)) throw ConfigError("synth.frame_rate_hz must be > 0");
  if (!(duration_h >= 0.0)) throw ConfigError("synth.duration_h must be >= 0");
  if (!(background_rate_hz >= 0.0)) throw ConfigError("synth.background_rate_hz must be >= 0");
  for (double r : pair_rates_per_hour) {
    if (!(r >= 0.0)) throw ConfigError("synth.pair_rates_per_hour must be >= 0");
  }
  background_spectrum.validate();
  if (!(energy_resolution_ev >= 0.0)) throw ConfigError("synth.energy_resolution_ev must be >= 0");
  if (!(adu_per_kev > 0.0)) throw ConfigError("synth.adu_per_kev must be > 0");
  if (!(noise_adu >= 0.0)) throw ConfigError("synth.noise_adu must be >= 0");
  if (!(gain_spread >= 0.0 && gain_spread < 0.2)) throw ConfigError("synth.gain_spread must be in [0, 0.2)");
  if (!(cti_mean >= 0.0 && cti_mean < 0.01)) throw ConfigError("synth.cti_mean must be in [0, 0.01)");
  if (!(cti_spread >= 0.0)) throw ConfigError("synth.cti_spread must be >= 0");
  if (!(charge_cloud_um >= 0.0)) throw ConfigError("synth.charge_cloud_um must be >= 0");
  if (!(background_sigma_px >= 0.0)) throw ConfigError("synth.background_sigma_px must be >= 0");
  for (auto r : masked_rows) {
    if (r < 0 || r >= geom.n_rows) throw ConfigError("synth.masked_rows entry outside the detector");
  }
  for (auto c : masked_cols) {
    if (c < 0 || c >= geom.n_cols) throw ConfigError("synth.masked_cols entry outside the detector");
  }
}

SynthConfig synth_config_from(const KeyValueConfig& cfg, const std::string& p) {
  SynthConfig s;
  s.frame_rate_hz = cfg.get_double(p + "frame_rate_hz", s.frame_rate_hz);
  s.duration_h = cfg.get_double(p + "duration_h", s.duration_h);
  if (cfg.contains(p + "frames")) {
    if (cfg.contains(p + "duration_h")) throw ConfigError("give synth.frames or synth.duration_h, not both");
    s.duration_h = static_cast<double>(cfg.get_int(p + "frames", 0)) / s.frame_rate_hz / 3600.0;
  }
  s.pair_rates_per_hour = cfg.get_doubles(p + "pair_rates_per_hour", {});
  s.background_rate_hz = cfg.get_double(p + "background_rate_hz", s.background_rate_hz);
  s.background_spectrum.edges_kev = cfg.get_doubles(p + "background_edges_kev", s.background_spectrum.edges_kev);
  s.background_spectrum.density = cfg.get_doubles(p + "background_density", s.background_spectrum.density);
  s.background_sigma_px = cfg.get_double(p + "background_sigma_px", s.background_sigma_px);
  s.energy_resolution_ev = cfg.get_double(p + "energy_resolution_ev", s.energy_resolution_ev);
  s.adu_per_kev = cfg.get_double(p + "adu_per_kev", s.adu_per_kev);
  s.noise_adu = cfg.get_double(p + "noise_adu", s.noise_adu);
  s.gain_spread = cfg.get_double(p + "gain_spread", s.gain_spread);
  s.cti_mean = cfg.get_double(p + "cti_mean", s.cti_mean);
  s.cti_spread = cfg.get_double(p + "cti_spread", s.cti_spread);
  s.masked_rows = cfg.get_ints(p + "masked_rows", {});
  s.masked_cols = cfg.get_ints(p + "masked_cols", {});
  s.charge_cloud_um = cfg.get_double(p + "charge_cloud_um", s.charge_cloud_um);
  s.footprint_jitter = cfg.get_bool(p + "footprint_jitter", s.footprint_jitter);
  s.reflect_pairs = cfg.get_bool(p + "reflect_pairs", s.reflect_pairs);
  s.rng_seed = static_cast<std::uint64_t>(cfg.get_int(p + "seed", static_cast<std::int64_t>(s.rng_seed)));
  return s;
}

PairSampler::PairSampler(const ExperimentGeometry& geom, const FarFieldMap& map, double energy_step_ev)
    : geom_(geom), solver_(geom), step_kev_(energy_step_ev * 1e-3) {
  if (map.width != geom.n_cols || map.height != geom.n_rows) throw DimensionError("map does not match the detector");
  map.windows.check_conjugate(geom.pump_energy_kev);
  range_ = own_energy_range(map.windows, geom.pump_energy_kev, true);
  const int boundary = geom.boundary_column();
  double acc = 0.0;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x <= boundary && x < map.width; ++x) {
      const double v = map.at(x, y);
      if (v > 0.0) {
        acc += v;
        cdf_.push_back(acc);
        pixels_.push_back(static_cast<std::uint32_t>(y) * map.width + x);
      }
    }
  }
  if (cdf_.empty() || range_.empty()) throw ConfigError("map has no signal-side emission to sample");
}

bool PairSampler::sample(CounterRng& rng, TrueEvent& signal, TrueEvent& idler) const {
  const std::uint32_t pix = pixels_[pick(cdf_, rng.uniform())];
  const int px = static_cast<int>(pix % geom_.n_cols);
  const int py = static_cast<int>(pix / geom_.n_cols);
  const double half_l = 0.5 * geom_.crystal_thickness_mm * kMmToAngstrom;

  const int n = std::max(1, static_cast<int>(std::ceil((range_.hi - range_.lo) / step_kev_ - 1e-9)));
  const double h = (range_.hi - range_.lo) / n;
  std::vector<double> cdf(n);
  for (int attempt = 0; attempt < 16; ++attempt) {
    const PixelCoord p{px - 0.5 + rng.uniform(), py - 0.5 + rng.uniform()};
    const Direction dir = pixel_to_direction(geom_, p);
    const auto ray = TransverseSolver::ray(dir);
    auto x_at = [&](double e) { return solver_.dk_z(ray, e) * half_l; };

    double acc = 0.0;
    double x_prev = x_at(range_.lo);
    for (int k = 0; k < n; ++k) {
      const double x = x_at(range_.lo + (k + 1) * h);
      if (!std::isnan(x) && !std::isnan(x_prev)) acc += sinc2_mean(x_prev, x);
      cdf[k] = acc;
      x_prev = x;
    }
    if (!(acc > 0.0)) continue;
    const std::size_t k = pick(cdf, rng.uniform());

    // Refine inside the chosen step.
    constexpr int kSub = 8;
    std::vector<double> sub(kSub);
    const double e0 = range_.lo + k * h;
    const double hs = h / kSub;
    double sacc = 0.0;
    x_prev = x_at(e0);
    for (int j = 0; j < kSub; ++j) {
      const double x = x_at(e0 + (j + 1) * hs);
      if (!std::isnan(x) && !std::isnan(x_prev)) sacc += sinc2_mean(x_prev, x);
      sub[j] = sacc;
      x_prev = x;
    }
    if (!(sacc > 0.0)) continue;
    const std::size_t j = pick(sub, rng.uniform());
    const double energy = e0 + (j + rng.uniform()) * hs;

    const auto s_kin = PhotonKinematics::from_energy(energy, dir);
    PhotonKinematics i_kin;
    try {
      i_kin = idler_from_signal(geom_, s_kin);
    } catch (const NoSolutionError&) {
      return false;
    }
    const PixelCoord ip = direction_to_pixel(geom_, i_kin.dir);
    signal.x_mm = p.x * geom_.pitch_x_mm();
    signal.y_mm = p.y * geom_.pitch_y_mm();
    signal.energy_kev = energy;
    signal.origin = Origin::pair_signal;
    idler.x_mm = ip.x * geom_.pitch_x_mm();
    idler.y_mm = ip.y * geom_.pitch_y_mm();
    idler.energy_kev = geom_.pump_energy_kev - energy;
    idler.origin = Origin::pair_idler;
    return true;
  }
  return false;
}

EventGenerator::EventGenerator(const ExperimentGeometry& geom, const SynthConfig& cfg,
                               const std::vector<FarFieldMap>& maps)
    : geom_(geom), cfg_(cfg) {
  cfg_.validate(geom);
  if (cfg_.pair_rates_per_hour.size() != maps.size()) {
    throw ConfigError("synth.pair_rates_per_hour needs one rate per simulated window pair (" +
                      std::to_string(maps.size()) + ")");
  }
  for (std::size_t k = 0; k < maps.size(); ++k) {
    if (cfg_.pair_rates_per_hour[k] > 0.0) {
      samplers_.emplace_back(geom, maps[k]);
      pairs_per_frame_.push_back(cfg_.pair_rates_per_hour[k] / 3600.0 / cfg_.frame_rate_hz);
    }
  }
  background_per_frame_ = cfg_.background_rate_hz / cfg_.frame_rate_hz;
  frames_ = cfg_.frame_count();
}

void EventGenerator::add_background(CounterRng& rng, std::int64_t frame_id, std::vector<TrueEvent>& out) const {
  const auto n = rng.poisson(background_per_frame_);
  const PixelCoord c = geom_.ring_center();
  const double aspect = geom_.pitch_y_mm() / geom_.pitch_x_mm();
  for (std::int64_t i = 0; i < n; ++i) {
    TrueEvent e;
    e.frame_id = frame_id;
    e.origin = Origin::background;
    double x, y;
    if (cfg_.background_sigma_px > 0.0) {
      do {
        x = c.x + cfg_.background_sigma_px * aspect * rng.normal();
        y = c.y + cfg_.background_sigma_px * rng.normal();
      } while (x < -0.5 || y < -0.5 || x >= geom_.n_cols - 0.5 || y >= geom_.n_rows - 0.5);
    } else {
      x = rng.uniform(-0.5, geom_.n_cols - 0.5);
      y = rng.uniform(-0.5, geom_.n_rows - 0.5);
    }
    e.x_mm = x * geom_.pitch_x_mm();
    e.y_mm = y * geom_.pitch_y_mm();
    e.energy_kev = cfg_.background_spectrum.sample(rng);
    out.push_back(e);
  }
}

void EventGenerator::frame_events(std::int64_t frame_id, std::vector<TrueEvent>& out) const {
  CounterRng rng(cfg_.rng_seed, static_cast<std::uint64_t>(frame_id), kStreamEvents);
  const PixelCoord c = geom_.ring_center();
  const double cx_mm = c.x * geom_.pitch_x_mm();
  const double cy_mm = c.y * geom_.pitch_y_mm();
  std::int64_t serial = 0;
  for (std::size_t k = 0; k < samplers_.size(); ++k) {
    const auto n = rng.poisson(pairs_per_frame_[k]);
    for (std::int64_t i = 0; i < n; ++i) {
      TrueEvent s, idl;
      if (!samplers_[k].sample(rng, s, idl)) continue;
      if (cfg_.footprint_jitter) {
        const SourceOffset o = sample_source_offset(geom_, rng);
        s.x_mm += o.along_cols_mm;
        idl.x_mm += o.along_cols_mm;
        s.y_mm += o.along_rows_mm;
        idl.y_mm += o.along_rows_mm;
      }
      if (cfg_.reflect_pairs && rng.uniform() < 0.5) {
        for (TrueEvent* e : {&s, &idl}) {
          e->x_mm = 2.0 * cx_mm - e->x_mm;
          e->y_mm = 2.0 * cy_mm - e->y_mm;
        }
      }
      s.frame_id = idl.frame_id = frame_id;
      s.pair_id = idl.pair_id = (frame_id << 16) | serial++;
      out.push_back(s);
      out.push_back(idl);
    }
  }
  add_background(rng, frame_id, out);
}

std::vector<TrueEvent> sample_events(const std::vector<FarFieldMap>& maps, const ExperimentGeometry& geom,
                                     const SynthConfig& cfg) {
  const EventGenerator gen(geom, cfg, maps);
  std::vector<TrueEvent> out;
  for (std::int64_t f = 0; f < gen.frame_count(); ++f) gen.frame_events(f, out);
  return out;
}

DetectorModel::DetectorModel(const ExperimentGeometry& geom, const SynthConfig& cfg)
    : geom_(geom), cfg_(cfg), width_(geom.n_cols), height_(geom.n_rows) {
  cfg_.validate(geom);
  const std::size_t n = static_cast<std::size_t>(width_) * height_;

  CounterRng grng(cfg_.rng_seed, 0, 0x6761696eULL);
  gain_.resize(n);
  for (auto& g : gain_) g = static_cast<float>(std::clamp(1.0 + cfg_.gain_spread * grng.normal(), 0.5, 1.5));
  CounterRng crng(cfg_.rng_seed, 0, 0x637469ULL);
  cti_.resize(width_);
  for (auto& c : cti_) c = std::clamp(cfg_.cti_mean * (1.0 + cfg_.cti_spread * crng.normal()), 0.0, 0.0099);

  defects_ = line_defects(width_, height_, cfg_.masked_rows, cfg_.masked_cols);
  forward_.resize(n);
  for (int x = 0; x < width_; ++x) {
    double transfer = 1.0;
    for (int y = 0; y < height_; ++y) {
      const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
      forward_[i] = static_cast<float>(static_cast<double>(gain_[i]) * transfer);
      transfer *= 1.0 - cti_[x];
    }
  }
  for (const auto& [x, y] : defects_) {
    const std::uint32_t i = static_cast<std::uint32_t>(y) * width_ + x;
    forward_[i] = 0.0f;
    defect_index_.push_back(i);
  }
  exclusion_ = build_exclusion_mask(width_, height_, defects_, 1);

  CounterRng nrng(cfg_.rng_seed, 0, 0x6e6f697365ULL);
  noise_table_.resize(kNoiseTable + n);
  for (std::size_t i = 0; i < kNoiseTable; ++i) noise_table_[i] = static_cast<float>(cfg_.noise_adu * nrng.normal());
  for (std::size_t i = 0; i < n; ++i) noise_table_[kNoiseTable + i] = noise_table_[i];
}

CalibrationSet DetectorModel::calibration(double threshold_sigma, int border) const {
  CalibrationSet c;
  c.width = width_;
  c.height = height_;
  c.gain = gain_;
  c.cti = cti_;
  c.noise_rms_adu = cfg_.noise_adu > 0.0 ? cfg_.noise_adu : 1.0;
  c.threshold_sigma = threshold_sigma;
  c.mask = build_exclusion_mask(width_, height_, defects_, border);
  c.adu_per_kev = cfg_.adu_per_kev;
  return c;
}

double DetectorModel::smear_energy(CounterRng& rng, double energy_kev) const {
  const double sigma = cfg_.energy_resolution_ev * 1e-3 * kFwhmToSigma;
  return sigma > 0.0 ? energy_kev + sigma * rng.normal() : energy_kev;
}

PixelCoord DetectorModel::to_pixel(const TrueEvent& e) const {
  return PixelCoord{e.x_mm / geom_.pitch_x_mm(), e.y_mm / geom_.pitch_y_mm()};
}

void DetectorModel::deposit(double x_px, double y_px, double energy_kev, std::vector<float>& charge) const {
  const double q = energy_kev * cfg_.adu_per_kev;
  const int ix = static_cast<int>(std::floor(x_px + 0.5));
  const int iy = static_cast<int>(std::floor(y_px + 0.5));
  const double sigma_um = cfg_.charge_cloud_um * kFwhmToSigma;
  if (sigma_um <= 1e-9) {
    if (ix >= 0 && iy >= 0 && ix < width_ && iy < height_) {
      charge[static_cast<std::size_t>(iy) * width_ + ix] += static_cast<float>(q);
    }
    return;
  }
  const double sx = sigma_um / geom_.pixel_pitch_x_um;
  const double sy = sigma_um / geom_.pixel_pitch_y_um;
  constexpr int kReach = 2;
  double fx[2 * kReach + 1], fy[2 * kReach + 1];
  for (int d = -kReach; d <= kReach; ++d) {
    fx[d + kReach] = normal_cdf((ix + d + 0.5 - x_px) / sx) - normal_cdf((ix + d - 0.5 - x_px) / sx);
    fy[d + kReach] = normal_cdf((iy + d + 0.5 - y_px) / sy) - normal_cdf((iy + d - 0.5 - y_px) / sy);
  }
  for (int dy = -kReach; dy <= kReach; ++dy) {
    const int yy = iy + dy;
    if (yy < 0 || yy >= height_ || fy[dy + kReach] == 0.0) continue;
    for (int dx = -kReach; dx <= kReach; ++dx) {
      const int xx = ix + dx;
      if (xx < 0 || xx >= width_) continue;
      const double share = fx[dx + kReach] * fy[dy + kReach];
      if (share > 0.0) charge[static_cast<std::size_t>(yy) * width_ + xx] += static_cast<float>(q * share);
    }
  }
}

void DetectorModel::render(std::int64_t frame_id, const std::vector<TrueEvent>& events,
                           std::vector<std::uint16_t>& out) const {
  const std::size_t n = static_cast<std::size_t>(width_) * height_;
  thread_local std::vector<float> charge;
  charge.assign(n, 0.0f);
  CounterRng rng(cfg_.rng_seed, static_cast<std::uint64_t>(frame_id), kStreamDetector);
  const std::size_t offset = rng() & (kNoiseTable - 1);
  for (const auto& e : events) {
    const double measured = smear_energy(rng, e.energy_kev);
    if (measured <= 0.0) continue;
    const PixelCoord p = to_pixel(e);
    deposit(p.x, p.y, measured, charge);
  }
  out.resize(n);
  kernels().render_adu(charge.data(), forward_.data(), noise_table_.data() + offset, out.data(), n);
  for (auto i : defect_index_) out[i] = 0;
}

void DetectorModel::fast_events(std::int64_t frame_id, const std::vector<TrueEvent>& events, EventList& out) const {
  CounterRng rng(cfg_.rng_seed, static_cast<std::uint64_t>(frame_id), kStreamDetector);
  (void)rng();  // keep the energy draws aligned with render()
  const std::size_t first = out.size();
  for (const auto& e : events) {
    const double measured = smear_energy(rng, e.energy_kev);
    if (measured <= 0.0) continue;
    const PixelCoord p = to_pixel(e);
    const int x = static_cast<int>(std::lround(p.x));
    const int y = static_cast<int>(std::lround(p.y));
    if (x < 0 || y < 0 || x >= width_ || y >= height_) continue;
    if (exclusion_[static_cast<std::size_t>(y) * width_ + x]) continue;
    PhotonEvent ev;
    ev.frame_id = frame_id;
    ev.x = x;
    ev.y = y;
    ev.cx = quantize_centroid(p.x);
    ev.cy = quantize_centroid(p.y);
    ev.energy_kev = quantize_energy_kev(measured);
    if (ev.energy_kev <= 0.0) continue;
    out.push_back(ev);
  }
  std::sort(out.begin() + static_cast<std::ptrdiff_t>(first), out.end(), event_order);
}

RawFrameSet detector_response(const std::vector<TrueEvent>& events, std::int64_t frame_count,
                              const DetectorModel& model) {
  RawFrameSet set;
  set.width = model.width();
  set.height = model.height();
  set.adu_per_kev = model.adu_per_kev();
  set.frames.resize(static_cast<std::size_t>(frame_count));
  std::size_t i = 0;
  std::vector<TrueEvent> frame;
  for (std::int64_t f = 0; f < frame_count; ++f) {
    frame.clear();
    while (i < events.size() && events[i].frame_id == f) frame.push_back(events[i++]);
    if (i < events.size() && events[i].frame_id < f) throw DomainError("detector_response: events not sorted by frame");
    model.render(f, frame, set.frames[static_cast<std::size_t>(f)]);
  }
  if (i != events.size()) throw DomainError("detector_response: events beyond the last frame");
  return set;
}

}  // namespace xspdc
