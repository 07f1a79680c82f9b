#pragma once

#include <optional>
#include <string>

#include "xspdc/config.hpp"

namespace xspdc {

/// Deviation angles in radians. `theta` is measured from the crystal normal
/// (z) inside the x-z diffraction plane, `phi` is the signed out-of-plane
/// angle (positive toward +y).
struct Direction {
  double theta = 0.0;
  double phi = 0.0;
};

struct PhotonKinematics {
  double energy_kev = 0.0;
  Direction dir;
  double k = 0.0;  ///< wave-vector magnitude in 1/Angstrom

  /// Builds kinematics with k = 2*pi*E/(hc), refractive index 1.
  static PhotonKinematics from_energy(double energy_kev, Direction dir);
};

struct MismatchVector {
  double dk_x = 0.0;
  double dk_y = 0.0;
  double dk_z = 0.0;
};

/// Fractional detector coordinates; pixel (i, j) is centred on (i, j).
/// `x` runs along columns, `y` along rows.
struct PixelCoord {
  double x = 0.0;
  double y = 0.0;
};

/// Crystal, pump and detector configuration.
///
/// Detector rows lie along the diffraction plane (theta), columns along the
/// out-of-plane direction (phi). Radial distances on the detector are reported
/// in "reference pixels", i.e. in units of the row pitch.
struct ExperimentGeometry {
  double pump_energy_kev = 21.0;
  double d_spacing_angstrom = 3.567 / 8.48528137423857;  // diamond (660): a / sqrt(72)
  double crystal_offset_deg = 0.0077114;                  // pump rotation above Bragg
  double crystal_thickness_mm = 0.8;
  double beam_width_mm = 0.5;
  double detector_distance_mm = 200.0;
  double pixel_pitch_x_um = 48.0;
  double pixel_pitch_y_um = 96.0;
  int n_cols = 264;
  int n_rows = 132;
  std::optional<PixelCoord> ring_center_override;
  std::optional<double> stated_bragg_angle_deg;

  /// Throws ConfigError on a violated invariant, including a stated Bragg
  /// angle that disagrees with the lattice by more than 0.05 deg.
  void validate() const;

  double g_magnitude() const;    ///< 2*pi/d
  double pump_k() const;         ///< 2*pi*E_p/(hc)
  double bragg_angle_rad() const;
  double pump_theta_rad() const;  ///< Bragg angle plus the crystal offset
  /// In-plane angle of k_p + G, the axis of the emission cones.
  double center_theta_rad() const;
  PhotonKinematics pump() const;

  /// Ring centre on the detector: the override, or the detector centre which
  /// sits on the k_p + G axis.
  PixelCoord ring_center() const;
  /// Column boundary of the half-plane split; this column belongs to side A.
  int boundary_column() const;

  double pitch_x_mm() const { return pixel_pitch_x_um * 1e-3; }
  double pitch_y_mm() const { return pixel_pitch_y_um * 1e-3; }
  double reference_pitch_mm() const { return pitch_y_mm(); }
  int pixel_count() const { return n_cols * n_rows; }
  bool inside(int x, int y) const { return x >= 0 && y >= 0 && x < n_cols && y < n_rows; }

  /// Physical distance from the ring centre in reference pixels.
  double radial_distance_px(PixelCoord p) const;

  /// Stable textual identity, hashed into map sidecars and manifests.
  std::string canonical() const;
  std::string hash() const;
};

/// Reads the `geometry.` section; unknown `geometry.*` keys are rejected.
ExperimentGeometry geometry_from_config(const KeyValueConfig& cfg, const std::string& prefix = "geometry.");
ExperimentGeometry load_geometry(const std::string& path);

double wavelength_angstrom(double energy_kev);
double wave_number(double energy_kev);

/// Bragg angle in degrees. Throws DomainError when lambda >= 2d.
double bragg_angle(double energy_kev, double d_spacing_angstrom);

/// The three mismatch components of k_p + G - k_s - k_i with G along x.
/// Signal and idler `phi` are physical out-of-plane angles, so the idler enters
/// the y balance with the mirrored orientation.
MismatchVector phase_mismatch(const ExperimentGeometry& geom, const PhotonKinematics& pump,
                              const PhotonKinematics& signal, const PhotonKinematics& idler);

/// Partner photon with E_i = E_p - E_s whose direction cancels the transverse
/// mismatch exactly (dk_x = dk_y = 0). dk_z is left free. Throws
/// NoSolutionError if no real direction exists.
PhotonKinematics idler_from_signal(const ExperimentGeometry& geom, const PhotonKinematics& signal);

/// Longitudinal mismatch dk_z after transverse matching, evaluated without
/// trigonometry. Returns NaN where no transverse-matched partner exists.
struct TransverseSolver {
  explicit TransverseSolver(const ExperimentGeometry& geom);

  /// Precomputed trigonometry of one signal direction.
  struct Ray {
    double sin_theta_cos_phi;
    double cos_theta_cos_phi;
    double sin_phi;
  };
  static Ray ray(Direction d);

  double dk_z(const Ray& r, double signal_energy_kev) const;

  double pump_energy_kev;
  double kp;
  double kx_budget;  ///< G - k_p sin(theta_p)
  double kz_pump;    ///< k_p cos(theta_p)
};

/// Small-angle energy-angle law: predicted d(theta_i)/d(theta_s) = -E_s/E_i.
double angle_ratio(double omega_s_kev, double omega_i_kev);

/// Exact in-plane ratio d(theta_i)/d(theta_s) for a signal displaced by
/// `dtheta_s_rad` from the cone axis at energy `omega_s_kev`.
double exact_angle_ratio(const ExperimentGeometry& geom, double omega_s_kev, double dtheta_s_rad);

/// Deviation of a pixel from the ring centre; theta deviation along rows,
/// phi along columns (exact flat-detector projection).
Direction pixel_to_angle(const ExperimentGeometry& geom, PixelCoord pixel);
PixelCoord angle_to_pixel(const ExperimentGeometry& geom, Direction deviation);

/// Absolute emission direction of a pixel (cone axis plus deviation) and back.
Direction pixel_to_direction(const ExperimentGeometry& geom, PixelCoord pixel);
PixelCoord direction_to_pixel(const ExperimentGeometry& geom, Direction dir);

}  // namespace xspdc
