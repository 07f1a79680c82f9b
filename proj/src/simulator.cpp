#include "xspdc/simulator.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <limits>

#include "xspdc/constants.hpp"
#include "xspdc/error.hpp"
#include "xspdc/parallel.hpp"
#include "xspdc/special.hpp"

namespace xspdc {

void EnergyWindow::validate() const {
  if (!(low_kev > 0.0) || !(high_kev > low_kev)) {
    throw ConfigError("energy window " + label() + " must satisfy 0 < low < high");
  }
}

EnergyWindow EnergyWindow::parse(const std::string& text) {
  // The separator is the first '-' that is not a leading sign.
  const auto dash = text.find('-', 1);
  if (dash == std::string::npos) throw ConfigError("energy window '" + text + "' is not low-high");
  EnergyWindow w;
  try {
    std::size_t used = 0;
    const std::string lo = text.substr(0, dash), hi = text.substr(dash + 1);
    w.low_kev = std::stod(lo, &used);
    if (used != lo.size()) throw std::invalid_argument(lo);
    w.high_kev = std::stod(hi, &used);
    if (used != hi.size()) throw std::invalid_argument(hi);
  } catch (const std::logic_error&) {
    throw ConfigError("energy window '" + text + "' is not low-high");
  }
  w.validate();
  return w;
}

std::string EnergyWindow::label() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g-%g", low_kev, high_kev);
  return buf;
}

void WindowPair::check_conjugate(double pump_energy_kev) const {
  signal.validate();
  idler.validate();
  const double lo = signal.low_kev + idler.low_kev;
  const double hi = signal.high_kev + idler.high_kev;
  if (!(pump_energy_kev >= lo && pump_energy_kev <= hi)) {
    throw WindowMismatchError("windows " + label() + " are not conjugate about the pump energy");
  }
  if (signal.center() + 1e-12 < idler.center()) {
    throw WindowMismatchError("windows " + label() + ": signal window must be the higher-energy one");
  }
}

WindowPair WindowPair::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("window pair '" + text + "' is not signal:idler");
  return WindowPair{EnergyWindow::parse(text.substr(0, colon)), EnergyWindow::parse(text.substr(colon + 1))};
}

std::vector<WindowPair> WindowPair::parse_list(const std::string& text) {
  std::vector<WindowPair> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto semi = text.find(';', pos);
    std::string item = text.substr(pos, semi == std::string::npos ? std::string::npos : semi - pos);
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }), item.end());
    if (!item.empty()) out.push_back(parse(item));
    if (semi == std::string::npos) break;
    pos = semi + 1;
  }
  return out;
}

std::string WindowPair::label() const { return signal.label() + ":" + idler.label(); }

void SimConfig::validate() const {
  if (!(energy_step_ev > 0.0)) throw ConfigError("simulate.energy_step_ev must be > 0");
  if (pixel_supersample < 1) throw ConfigError("simulate.pixel_supersample must be >= 1");
  if (mc_samples <= 0) throw ConfigError("simulate.mc_samples must be > 0");
  if (!(kappa_eff > 0.0)) throw ConfigError("simulate.kappa_eff must be > 0");
}

SimConfig sim_config_from(const KeyValueConfig& cfg, const std::string& prefix) {
  SimConfig s;
  s.energy_step_ev = cfg.get_double(prefix + "energy_step_ev", s.energy_step_ev);
  s.pixel_supersample = static_cast<int>(cfg.get_int(prefix + "pixel_supersample", s.pixel_supersample));
  s.kappa_eff = cfg.get_double(prefix + "kappa_eff", s.kappa_eff);
  s.include_footprint_broadening = cfg.get_bool(prefix + "footprint_broadening", s.include_footprint_broadening);
  s.mc_samples = cfg.get_int(prefix + "mc_samples", s.mc_samples);
  s.rng_seed = static_cast<std::uint64_t>(cfg.get_int(prefix + "seed", static_cast<std::int64_t>(s.rng_seed)));
  const auto q = cfg.get_string(prefix + "quadrature", "linear_phase");
  if (q == "linear_phase") {
    s.quadrature = Quadrature::linear_phase;
  } else if (q == "midpoint") {
    s.quadrature = Quadrature::midpoint;
  } else {
    throw ConfigError("simulate.quadrature must be linear_phase or midpoint");
  }
  s.validate();
  return s;
}

double pair_weight(double dk_z, double length_mm) {
  const double s = sinc(0.5 * dk_z * length_mm * kMmToAngstrom);
  return s * s;
}

namespace {

// Far from the ridge, sin^2 averages to 1/2 over the step and the exact mean of
// 1/x^2 between x1 and x2 is 1/(x1 x2).
double step_mean(double x1, double x2) {
  if (x1 * x2 > 1e6) return 0.5 / (x1 * x2);
  return sinc2_mean(x1, x2);
}

}  // namespace

double energy_integrated_weight(const TransverseSolver& solver, const TransverseSolver::Ray& ray, double e_lo,
                                double e_hi, double step_kev, double length_mm, Quadrature quadrature) {
  if (!(e_hi > e_lo)) return 0.0;
  const int n = std::max(1, static_cast<int>(std::ceil((e_hi - e_lo) / step_kev - 1e-9)));
  const double h = (e_hi - e_lo) / n;
  const double half_l = 0.5 * length_mm * kMmToAngstrom;
  double sum = 0.0;
  if (quadrature == Quadrature::midpoint) {
    for (int k = 0; k < n; ++k) {
      const double dkz = solver.dk_z(ray, e_lo + (k + 0.5) * h);
      if (std::isnan(dkz)) continue;
      const double s = sinc(dkz * half_l);
      sum += s * s;
    }
    return sum * h;
  }
  double x_prev = solver.dk_z(ray, e_lo) * half_l;
  for (int k = 1; k <= n; ++k) {
    const double x = solver.dk_z(ray, e_lo + k * h) * half_l;
    if (!std::isnan(x) && !std::isnan(x_prev)) sum += step_mean(x_prev, x);
    x_prev = x;
  }
  return sum * h;
}

EnergyRange own_energy_range(const WindowPair& w, double pump, bool signal_side) {
  const EnergyWindow& own = signal_side ? w.signal : w.idler;
  const EnergyWindow& partner = signal_side ? w.idler : w.signal;
  return EnergyRange{std::max(own.low_kev, pump - partner.high_kev), std::min(own.high_kev, pump - partner.low_kev)};
}

FarFieldMap far_field_map(const ExperimentGeometry& geom, const EnergyWindow& s_window, const EnergyWindow& i_window,
                          const SimConfig& cfg) {
  return far_field_map(geom, WindowPair{s_window, i_window}, cfg);
}

FarFieldMap far_field_map(const ExperimentGeometry& geom, const WindowPair& windows, const SimConfig& cfg) {
  cfg.validate();
  windows.check_conjugate(geom.pump_energy_kev);

  FarFieldMap map;
  map.width = geom.n_cols;
  map.height = geom.n_rows;
  map.windows = windows;
  map.geometry_hash = geom.hash();
  map.values.assign(static_cast<std::size_t>(map.width) * map.height, 0.0);

  const TransverseSolver solver(geom);
  const int boundary = geom.boundary_column();
  const EnergyRange range_a = own_energy_range(windows, geom.pump_energy_kev, true);
  const EnergyRange range_b = own_energy_range(windows, geom.pump_energy_kev, false);
  const double step_kev = cfg.energy_step_ev * 1e-3;
  const int ss = cfg.pixel_supersample;

  parallel_chunks(static_cast<std::size_t>(map.height), [&](std::size_t row_begin, std::size_t row_end) {
    for (std::size_t y = row_begin; y < row_end; ++y) {
      for (int x = 0; x < map.width; ++x) {
        const EnergyRange& r = x <= boundary ? range_a : range_b;
        if (r.empty()) continue;
        double acc = 0.0;
        for (int sy = 0; sy < ss; ++sy) {
          for (int sx = 0; sx < ss; ++sx) {
            const PixelCoord p{x - 0.5 + (sx + 0.5) / ss, static_cast<double>(y) - 0.5 + (sy + 0.5) / ss};
            const auto ray = TransverseSolver::ray(pixel_to_direction(geom, p));
            acc += energy_integrated_weight(solver, ray, r.lo, r.hi, step_kev, geom.crystal_thickness_mm,
                                            cfg.quadrature);
          }
        }
        map.values[y * map.width + x] = cfg.kappa_eff * acc / (ss * ss);
      }
    }
  });

  if (cfg.include_footprint_broadening) {
    map.raw_peak = 1.0;  // convolve in raw units, normalise below
    map = convolve_footprint(map, footprint_estimate(geom, cfg).kernel);
  }
  const double peak = *std::max_element(map.values.begin(), map.values.end());
  map.raw_peak = peak;
  if (peak > 0.0) {
    for (auto& v : map.values) v /= peak;
  }
  map.normalization = Normalization::relative;
  return map;
}

double calibrate_pairs_per_hour(const std::vector<FarFieldMap>& maps, double total_pairs_per_hour) {
  double raw_total = 0.0;
  for (const auto& m : maps) {
    double s = 0.0;
    for (double v : m.values) s += v;
    raw_total += m.normalization == Normalization::relative ? s * m.raw_peak : s / m.pairs_per_hour_per_unit;
  }
  if (!(raw_total > 0.0)) throw ConfigError("cannot calibrate an empty map set");
  return total_pairs_per_hour / raw_total;
}

FarFieldMap to_pairs_per_hour(const FarFieldMap& map, double pairs_per_hour_per_unit) {
  if (map.normalization != Normalization::relative) throw ConfigError("map is already absolute");
  FarFieldMap out = map;
  for (auto& v : out.values) v *= map.raw_peak * pairs_per_hour_per_unit;
  out.normalization = Normalization::pairs_per_hour;
  out.pairs_per_hour_per_unit = pairs_per_hour_per_unit;
  return out;
}

namespace {

double ridge_offset_rad(const ExperimentGeometry& geom, double omega, double sign) {
  const TransverseSolver solver(geom);
  const double tc = geom.center_theta_rad();
  auto f = [&](double d) { return solver.dk_z(TransverseSolver::ray({tc + sign * d, 0.0}), omega); };
  constexpr int kSteps = 4000;
  constexpr double kMax = 0.1;
  double lo = 1e-7;
  double f_lo = f(lo);
  for (int i = 1; i <= kSteps; ++i) {
    double hi = kMax * i / kSteps;
    const double f_hi = f(hi);
    if (!std::isnan(f_lo) && !std::isnan(f_hi) && (f_lo == 0.0 || f_lo * f_hi < 0.0)) {
      for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if ((fm < 0.0) == (f_lo < 0.0)) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      return 0.5 * (lo + hi);
    }
    lo = hi;
    f_lo = f_hi;
  }
  throw NoSolutionError("ring_radius_predicted: no phase-matched ring within 0.1 rad");
}

}  // namespace

double ring_radius_angle(const ExperimentGeometry& geom, double omega_kev) {
  if (!(omega_kev > 0.0) || !(omega_kev < geom.pump_energy_kev)) {
    throw DomainError("ring radius needs 0 < omega < pump energy");
  }
  return 0.5 * (ridge_offset_rad(geom, omega_kev, +1.0) + ridge_offset_rad(geom, omega_kev, -1.0));
}

double ring_radius_predicted(const ExperimentGeometry& geom, double omega_kev) {
  if (!(omega_kev > 0.0) || !(omega_kev < geom.pump_energy_kev)) {
    throw DomainError("ring radius needs 0 < omega < pump energy");
  }
  const double D = geom.detector_distance_mm;
  const double up = D * std::tan(ridge_offset_rad(geom, omega_kev, +1.0));
  const double down = D * std::tan(ridge_offset_rad(geom, omega_kev, -1.0));
  return 0.5 * (up + down) / geom.reference_pitch_mm();
}

double footprint_extent_mm(const ExperimentGeometry& geom) {
  const double tp = geom.pump_theta_rad();
  return geom.beam_width_mm / std::cos(tp) + geom.crystal_thickness_mm * std::tan(tp);
}

SourceOffset sample_source_offset(const ExperimentGeometry& geom, CounterRng& rng) {
  const double extent = footprint_extent_mm(geom);
  SourceOffset o;
  o.along_rows_mm = extent * (rng.uniform() - 0.5);
  o.along_cols_mm = geom.beam_width_mm * (rng.uniform() - 0.5);
  return o;
}

double profile_fwhm(const std::vector<double>& p, double bin_width) {
  if (p.empty()) return 0.0;
  const auto peak_it = std::max_element(p.begin(), p.end());
  const double half = 0.5 * *peak_it;
  if (!(half > 0.0)) return 0.0;
  std::size_t il = 0;
  while (p[il] < half) ++il;
  std::size_t ir = p.size() - 1;
  while (p[ir] < half) --ir;
  const double left = il == 0 ? -0.5 : (il - 1) + (half - p[il - 1]) / (p[il] - p[il - 1]);
  const double right = ir + 1 == p.size() ? ir + 0.5 : ir + (p[ir] - half) / (p[ir] - p[ir + 1]);
  return (right - left) * bin_width;
}

FootprintEstimate footprint_estimate(const ExperimentGeometry& geom, const SimConfig& cfg) {
  cfg.validate();
  const double pitch_r = geom.pitch_y_mm();
  const double pitch_c = geom.pitch_x_mm();
  const double extent = footprint_extent_mm(geom);

  constexpr double kFine = 0.25;  // histogram bin in reference pixels
  const int fine_half = static_cast<int>(std::ceil(0.5 * extent / pitch_r / kFine)) + 4;
  std::vector<double> fine(2 * fine_half + 1, 0.0);
  const int row_half = static_cast<int>(std::ceil(0.5 * extent / pitch_r)) + 1;
  const int col_half = static_cast<int>(std::ceil(0.5 * geom.beam_width_mm / pitch_c)) + 1;
  FootprintKernel kernel;
  kernel.rows.assign(2 * row_half + 1, 0.0);
  kernel.cols.assign(2 * col_half + 1, 0.0);

  CounterRng rng(cfg.rng_seed, 0x466f6f7470726e74ULL);
  for (std::int64_t i = 0; i < cfg.mc_samples; ++i) {
    const SourceOffset o = sample_source_offset(geom, rng);
    const double r_px = o.along_rows_mm / pitch_r;
    fine[std::clamp<long>(std::lround(r_px / kFine) + fine_half, 0, static_cast<long>(fine.size()) - 1)] += 1.0;
    kernel.rows[std::clamp<long>(std::lround(r_px) + row_half, 0, 2 * row_half)] += 1.0;
    kernel.cols[std::clamp<long>(std::lround(o.along_cols_mm / pitch_c) + col_half, 0, 2 * col_half)] += 1.0;
  }
  const double n = static_cast<double>(cfg.mc_samples);
  for (auto& v : kernel.rows) v /= n;
  for (auto& v : kernel.cols) v /= n;

  FootprintEstimate est;
  est.fwhm_px = profile_fwhm(fine, kFine);
  est.fwhm_mm = est.fwhm_px * geom.reference_pitch_mm();
  est.fwhm_deg = rad_to_deg(std::atan(est.fwhm_mm / geom.detector_distance_mm));
  est.kernel = std::move(kernel);
  return est;
}

double footprint_fwhm(const ExperimentGeometry& geom, const SimConfig& cfg) {
  return footprint_estimate(geom, cfg).fwhm_px;
}

FarFieldMap convolve_footprint(const FarFieldMap& map, const FootprintKernel& kernel) {
  const int w = map.width, h = map.height;
  const int hr = static_cast<int>(kernel.rows.size() / 2);
  const int hc = static_cast<int>(kernel.cols.size() / 2);
  std::vector<double> tmp(map.values.size(), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -hr; k <= hr; ++k) {
        const int yy = y - k;
        if (yy >= 0 && yy < h) acc += kernel.rows[k + hr] * map.at(x, yy);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  FarFieldMap out = map;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -hc; k <= hc; ++k) {
        const int xx = x - k;
        if (xx >= 0 && xx < w) acc += kernel.cols[k + hc] * tmp[static_cast<std::size_t>(y) * w + xx];
      }
      out.at(x, y) = acc;
    }
  }
  if (map.normalization == Normalization::relative) {
    const double peak = *std::max_element(out.values.begin(), out.values.end());
    if (peak > 0.0) {
      for (auto& v : out.values) v /= peak;
      out.raw_peak = map.raw_peak * peak;
    }
  }
  return out;
}

}  // namespace xspdc
