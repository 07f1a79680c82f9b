#include "xspdc/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "xspdc/constants.hpp"
#include "xspdc/error.hpp"

namespace xspdc {

double wavelength_angstrom(double energy_kev) { return kHcKevAngstrom / energy_kev; }

double wave_number(double energy_kev) { return 2.0 * kPi * energy_kev / kHcKevAngstrom; }

double bragg_angle(double energy_kev, double d_spacing_angstrom) {
  if (!(energy_kev > 0.0) || !(d_spacing_angstrom > 0.0)) {
    throw DomainError("bragg_angle: energy and d-spacing must be positive");
  }
  const double s = wavelength_angstrom(energy_kev) / (2.0 * d_spacing_angstrom);
  if (s >= 1.0) throw DomainError("bragg_angle: wavelength exceeds 2d, no reflection");
  return rad_to_deg(std::asin(s));
}

PhotonKinematics PhotonKinematics::from_energy(double energy_kev, Direction dir) {
  return PhotonKinematics{energy_kev, dir, wave_number(energy_kev)};
}

void ExperimentGeometry::validate() const {
  if (!(pump_energy_kev > 0.0)) throw ConfigError("geometry: pump_energy_kev must be > 0");
  if (!(d_spacing_angstrom > 0.0)) throw ConfigError("geometry: d_spacing must be > 0");
  if (!(detector_distance_mm > 0.0)) throw ConfigError("geometry: detector_distance_mm must be > 0");
  if (!(pixel_pitch_x_um > 0.0) || !(pixel_pitch_y_um > 0.0)) {
    throw ConfigError("geometry: pixel pitches must be > 0");
  }
  if (n_cols < 2 || n_rows < 2) throw ConfigError("geometry: detector needs at least 2x2 pixels");
  if (crystal_thickness_mm < 0.0 || beam_width_mm < 0.0) {
    throw ConfigError("geometry: thickness and beam width must be >= 0");
  }
  double computed = 0.0;
  try {
    computed = bragg_angle(pump_energy_kev, d_spacing_angstrom);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("geometry: ") + e.what());
  }
  if (stated_bragg_angle_deg && std::fabs(*stated_bragg_angle_deg - computed) > 0.05) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "geometry: stated Bragg angle %.4f deg disagrees with lattice (%.4f deg)",
                  *stated_bragg_angle_deg, computed);
    throw ConfigError(buf);
  }
  if (std::fabs(crystal_offset_deg) >= 1.0) throw ConfigError("geometry: crystal_offset_deg out of range");
}

double ExperimentGeometry::g_magnitude() const { return 2.0 * kPi / d_spacing_angstrom; }

double ExperimentGeometry::pump_k() const { return wave_number(pump_energy_kev); }

double ExperimentGeometry::bragg_angle_rad() const {
  return deg_to_rad(bragg_angle(pump_energy_kev, d_spacing_angstrom));
}

double ExperimentGeometry::pump_theta_rad() const {
  return bragg_angle_rad() + deg_to_rad(crystal_offset_deg);
}

double ExperimentGeometry::center_theta_rad() const {
  const double tp = pump_theta_rad();
  const double kp = pump_k();
  return std::atan2(g_magnitude() - kp * std::sin(tp), kp * std::cos(tp));
}

PhotonKinematics ExperimentGeometry::pump() const {
  return PhotonKinematics::from_energy(pump_energy_kev, Direction{pump_theta_rad(), 0.0});
}

PixelCoord ExperimentGeometry::ring_center() const {
  if (ring_center_override) return *ring_center_override;
  return PixelCoord{0.5 * (n_cols - 1), 0.5 * (n_rows - 1)};
}

int ExperimentGeometry::boundary_column() const {
  return static_cast<int>(std::floor(ring_center().x));
}

double ExperimentGeometry::radial_distance_px(PixelCoord p) const {
  const PixelCoord c = ring_center();
  const double dx = (p.x - c.x) * pitch_x_mm();
  const double dy = (p.y - c.y) * pitch_y_mm();
  return std::hypot(dx, dy) / reference_pitch_mm();
}

std::string ExperimentGeometry::canonical() const {
  const PixelCoord c = ring_center();
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "pump_energy_kev=%.17g;d_spacing=%.17g;offset=%.17g;thickness=%.17g;beam=%.17g;"
                "distance=%.17g;pitch_x=%.17g;pitch_y=%.17g;cols=%d;rows=%d;cx=%.17g;cy=%.17g",
                pump_energy_kev, d_spacing_angstrom, crystal_offset_deg, crystal_thickness_mm, beam_width_mm,
                detector_distance_mm, pixel_pitch_x_um, pixel_pitch_y_um, n_cols, n_rows, c.x, c.y);
  return buf;
}

std::string ExperimentGeometry::hash() const { return hex64(fnv1a64(canonical())); }

ExperimentGeometry geometry_from_config(const KeyValueConfig& cfg, const std::string& prefix) {
  ExperimentGeometry g;
  auto key = [&](const char* name) { return prefix + name; };
  g.pump_energy_kev = cfg.get_double(key("pump_energy_kev"), g.pump_energy_kev);
  if (auto d = cfg.find_double(key("d_spacing_A"))) {
    g.d_spacing_angstrom = *d;
  } else if (auto a = cfg.find_double(key("lattice_a_A"))) {
    const auto hkl = cfg.get_ints(key("hkl"), {6, 6, 0});
    if (hkl.size() != 3) throw ConfigError("geometry.hkl needs three integers");
    const double n2 = static_cast<double>(hkl[0] * hkl[0] + hkl[1] * hkl[1] + hkl[2] * hkl[2]);
    if (n2 <= 0.0) throw ConfigError("geometry.hkl must not be 0 0 0");
    g.d_spacing_angstrom = *a / std::sqrt(n2);
  }
  g.stated_bragg_angle_deg = cfg.find_double(key("bragg_angle_deg"));
  g.crystal_offset_deg = cfg.get_double(key("crystal_offset_deg"), g.crystal_offset_deg);
  g.crystal_thickness_mm = cfg.get_double(key("crystal_thickness_mm"), g.crystal_thickness_mm);
  g.beam_width_mm = cfg.get_double(key("beam_width_mm"), g.beam_width_mm);
  g.detector_distance_mm = cfg.get_double(key("detector_distance_mm"), g.detector_distance_mm);
  g.pixel_pitch_x_um = cfg.get_double(key("pixel_pitch_x_um"), g.pixel_pitch_x_um);
  g.pixel_pitch_y_um = cfg.get_double(key("pixel_pitch_y_um"), g.pixel_pitch_y_um);
  g.n_cols = static_cast<int>(cfg.get_int(key("n_cols"), g.n_cols));
  g.n_rows = static_cast<int>(cfg.get_int(key("n_rows"), g.n_rows));
  const auto cx = cfg.find_double(key("ring_center_x"));
  const auto cy = cfg.find_double(key("ring_center_y"));
  if (cx.has_value() != cy.has_value()) {
    throw ConfigError("geometry.ring_center_x and ring_center_y must be given together");
  }
  if (cx) g.ring_center_override = PixelCoord{*cx, *cy};
  cfg.reject_unconsumed(prefix);
  g.validate();
  return g;
}

ExperimentGeometry load_geometry(const std::string& path) {
  const auto cfg = KeyValueConfig::load(path);
  // A bare geometry file may omit the section header.
  bool sectioned = false;
  for (const auto& [k, v] : cfg.entries()) sectioned |= k.rfind("geometry.", 0) == 0;
  const auto g = geometry_from_config(cfg, sectioned ? "geometry." : "");
  cfg.reject_unconsumed();
  return g;
}

MismatchVector phase_mismatch(const ExperimentGeometry& geom, const PhotonKinematics& pump,
                              const PhotonKinematics& signal, const PhotonKinematics& idler) {
  const double G = geom.g_magnitude();
  const auto& s = signal.dir;
  const auto& i = idler.dir;
  MismatchVector m;
  m.dk_x = G - pump.k * std::sin(pump.dir.theta) - signal.k * std::cos(s.phi) * std::sin(s.theta) -
           idler.k * std::cos(i.phi) * std::sin(i.theta);
  m.dk_y = idler.k * std::sin(-i.phi) - signal.k * std::sin(s.phi);
  m.dk_z = pump.k * std::cos(pump.dir.theta) - signal.k * std::cos(s.phi) * std::cos(s.theta) -
           idler.k * std::cos(i.phi) * std::cos(i.theta);
  return m;
}

PhotonKinematics idler_from_signal(const ExperimentGeometry& geom, const PhotonKinematics& signal) {
  const double ei = geom.pump_energy_kev - signal.energy_kev;
  if (!(ei > 0.0)) throw NoSolutionError("idler_from_signal: signal energy must be below the pump energy");
  const double ki = wave_number(ei);
  const PhotonKinematics pump = geom.pump();
  const double qx = geom.g_magnitude() - pump.k * std::sin(pump.dir.theta) -
                    signal.k * std::cos(signal.dir.phi) * std::sin(signal.dir.theta);
  const double qy = -signal.k * std::sin(signal.dir.phi);
  const double sin_phi = qy / ki;
  if (std::fabs(sin_phi) > 1.0) throw NoSolutionError("idler_from_signal: |sin(phi_i)| > 1");
  const double phi = std::asin(sin_phi);
  const double sin_theta = qx / (ki * std::cos(phi));
  if (!(std::fabs(sin_theta) <= 1.0)) throw NoSolutionError("idler_from_signal: |sin(theta_i)| > 1");
  return PhotonKinematics{ei, Direction{std::asin(sin_theta), phi}, ki};
}

TransverseSolver::TransverseSolver(const ExperimentGeometry& geom)
    : pump_energy_kev(geom.pump_energy_kev), kp(geom.pump_k()) {
  const double tp = geom.pump_theta_rad();
  kx_budget = geom.g_magnitude() - kp * std::sin(tp);
  kz_pump = kp * std::cos(tp);
}

TransverseSolver::Ray TransverseSolver::ray(Direction d) {
  const double cp = std::cos(d.phi);
  return Ray{std::sin(d.theta) * cp, std::cos(d.theta) * cp, std::sin(d.phi)};
}

double TransverseSolver::dk_z(const Ray& r, double signal_energy_kev) const {
  const double ks = wave_number(signal_energy_kev);
  const double ki = kp - ks;
  if (!(ki > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  const double qx = kx_budget - ks * r.sin_theta_cos_phi;
  const double qy = ks * r.sin_phi;
  const double kz2 = ki * ki - qx * qx - qy * qy;
  if (kz2 < 0.0) return std::numeric_limits<double>::quiet_NaN();
  return kz_pump - ks * r.cos_theta_cos_phi - std::sqrt(kz2);
}

double angle_ratio(double omega_s_kev, double omega_i_kev) { return -omega_s_kev / omega_i_kev; }

double exact_angle_ratio(const ExperimentGeometry& geom, double omega_s_kev, double dtheta_s_rad) {
  const double tc = geom.center_theta_rad();
  const auto on_axis = idler_from_signal(geom, PhotonKinematics::from_energy(omega_s_kev, {tc, 0.0}));
  const auto moved = idler_from_signal(geom, PhotonKinematics::from_energy(omega_s_kev, {tc + dtheta_s_rad, 0.0}));
  return (moved.dir.theta - on_axis.dir.theta) / dtheta_s_rad;
}

Direction pixel_to_angle(const ExperimentGeometry& geom, PixelCoord pixel) {
  const PixelCoord c = geom.ring_center();
  const double D = geom.detector_distance_mm;
  const double u = (pixel.y - c.y) * geom.pitch_y_mm();
  const double v = (pixel.x - c.x) * geom.pitch_x_mm();
  return Direction{std::atan(u / D), std::atan(v / std::hypot(D, u))};
}

PixelCoord angle_to_pixel(const ExperimentGeometry& geom, Direction deviation) {
  const PixelCoord c = geom.ring_center();
  const double D = geom.detector_distance_mm;
  const double u = D * std::tan(deviation.theta);
  const double v = std::tan(deviation.phi) * std::hypot(D, u);
  return PixelCoord{c.x + v / geom.pitch_x_mm(), c.y + u / geom.pitch_y_mm()};
}

Direction pixel_to_direction(const ExperimentGeometry& geom, PixelCoord pixel) {
  Direction d = pixel_to_angle(geom, pixel);
  d.theta += geom.center_theta_rad();
  return d;
}

PixelCoord direction_to_pixel(const ExperimentGeometry& geom, Direction dir) {
  dir.theta -= geom.center_theta_rad();
  return angle_to_pixel(geom, dir);
}

}  // namespace xspdc
