#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "xspdc/config.hpp"
#include "xspdc/constants.hpp"
#include "xspdc/error.hpp"
#include "xspdc/geometry.hpp"

using namespace xspdc;

namespace {

// Independent evaluation of the mismatch components, written out term by term.
MismatchVector mismatch_oracle(double G, double kp, double tp, double ks, Direction s, double ki, Direction i) {
  MismatchVector m;
  const double sx = ks * std::sin(s.theta) * std::cos(s.phi);
  const double ix = ki * std::sin(i.theta) * std::cos(i.phi);
  m.dk_x = (G - kp * std::sin(tp)) - sx - ix;
  m.dk_y = -(ki * std::sin(i.phi) + ks * std::sin(s.phi));
  const double sz = ks * std::cos(s.theta) * std::cos(s.phi);
  const double iz = ki * std::cos(i.theta) * std::cos(i.phi);
  m.dk_z = kp * std::cos(tp) - sz - iz;
  return m;
}

// 2D Newton on (theta_i, phi_i) for dk_x = dk_y = 0 with a numerical Jacobian.
Direction newton_idler(const ExperimentGeometry& g, const PhotonKinematics& s) {
  const auto pump = g.pump();
  const double ki = wave_number(g.pump_energy_kev - s.energy_kev);
  Direction d{g.center_theta_rad(), 0.0};
  auto residual = [&](Direction t) {
    const auto m = mismatch_oracle(g.g_magnitude(), pump.k, pump.dir.theta, s.k, s.dir, ki, t);
    return std::pair<double, double>{m.dk_x, m.dk_y};
  };
  for (int it = 0; it < 50; ++it) {
    const auto [fx, fy] = residual(d);
    if (std::fabs(fx) < 1e-13 && std::fabs(fy) < 1e-13) break;
    const double h = 1e-7;
    const auto [ax, ay] = residual({d.theta + h, d.phi});
    const auto [bx, by] = residual({d.theta, d.phi + h});
    const double j11 = (ax - fx) / h, j21 = (ay - fy) / h, j12 = (bx - fx) / h, j22 = (by - fy) / h;
    const double det = j11 * j22 - j12 * j21;
    d.theta -= (j22 * fx - j12 * fy) / det;
    d.phi -= (-j21 * fx + j11 * fy) / det;
  }
  return d;
}

}  // namespace

TEST_CASE("bragg angle of diamond 660 at 21 keV") {
  const double d = 3.567 / std::sqrt(72.0);
  CHECK(std::fabs(bragg_angle(21.0, 0.42035) - 44.61) <= 0.02);
  const double theta = bragg_angle(21.0, d);
  CHECK(theta > 44.56);
  CHECK(theta < 44.66);
}

TEST_CASE("bragg angle against a direct wavelength evaluation") {
  const double d = 0.42035;
  for (double e : {15.0, 21.0, 30.0}) {
    const double lambda = 12.39842 / e;
    const double want = std::asin(lambda / (2.0 * d)) * 180.0 / 3.141592653589793;
    CHECK(bragg_angle(e, d) == doctest::Approx(want).epsilon(1e-12));
  }
  // lambda = 2 d sin(30 deg) = d
  CHECK(bragg_angle(12.39842 / d, d) == doctest::Approx(30.0).epsilon(1e-12));
  // At 10.5 keV the wavelength exceeds 2d; the (330) spacing 2d reflects.
  const double lambda = 12.39842 / 10.5;
  CHECK_THROWS_AS(bragg_angle(10.5, d), DomainError);
  CHECK(bragg_angle(10.5, 2.0 * d) ==
        doctest::Approx(std::asin(lambda / (2.0 * 0.42035 * 2.0)) * 180.0 / 3.141592653589793).epsilon(1e-12));
}

TEST_CASE("bragg angle without a reflection throws") {
  CHECK_THROWS_AS(bragg_angle(10.5, 0.42035), DomainError);
  CHECK_THROWS_AS(bragg_angle(-1.0, 0.42035), DomainError);
}

TEST_CASE("phase mismatch matches a term-by-term evaluation") {
  ExperimentGeometry g;
  const auto pump = g.pump();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> ang(-0.9, 0.9), en(2.0, 19.0);
  for (int n = 0; n < 200; ++n) {
    const auto s = PhotonKinematics::from_energy(en(rng), {ang(rng), 0.3 * ang(rng)});
    const auto i = PhotonKinematics::from_energy(21.0 - s.energy_kev, {ang(rng), 0.3 * ang(rng)});
    const auto m = phase_mismatch(g, pump, s, i);
    const auto o = mismatch_oracle(g.g_magnitude(), pump.k, pump.dir.theta, s.k, s.dir, i.k, i.dir);
    CHECK(m.dk_x == doctest::Approx(o.dk_x).epsilon(1e-12));
    CHECK(m.dk_y == doctest::Approx(o.dk_y).epsilon(1e-12));
    CHECK(m.dk_z == doctest::Approx(o.dk_z).epsilon(1e-12));
  }
}

TEST_CASE("degenerate symmetric pair has zero out-of-plane mismatch") {
  ExperimentGeometry g;
  const double tc = g.center_theta_rad();
  const auto s = PhotonKinematics::from_energy(10.5, {tc + 0.01, 0.004});
  const auto i = PhotonKinematics::from_energy(10.5, {tc - 0.01, -0.004});
  CHECK(phase_mismatch(g, g.pump(), s, i).dk_y == 0.0);
}

TEST_CASE("half-energy photons on the Bragg direction cancel the transverse mismatch") {
  ExperimentGeometry g;
  g.crystal_offset_deg = 0.0;
  const double tb = g.bragg_angle_rad();
  const auto s = PhotonKinematics::from_energy(10.5, {tb, 0.0});
  const auto m = phase_mismatch(g, g.pump(), s, s);
  // G - k_p sin(tB) - 2 (k_p/2) sin(tB) = G - 2 k_p sin(tB) = 0
  CHECK(std::fabs(m.dk_x) < 1e-12);
  CHECK(m.dk_y == 0.0);
}

TEST_CASE("idler solution agrees with a Newton oracle") {
  ExperimentGeometry g;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dev(-0.03, 0.03), en(7.0, 14.0);
  for (int n = 0; n < 100; ++n) {
    const auto s = PhotonKinematics::from_energy(en(rng), {g.center_theta_rad() + dev(rng), dev(rng)});
    const auto i = idler_from_signal(g, s);
    const auto d = newton_idler(g, s);
    CHECK(i.dir.theta == doctest::Approx(d.theta).epsilon(1e-10));
    CHECK(std::fabs(i.dir.phi - d.phi) < 1e-10);
    CHECK(i.energy_kev == doctest::Approx(21.0 - s.energy_kev).epsilon(1e-15));
    const auto m = phase_mismatch(g, g.pump(), s, i);
    CHECK(std::fabs(m.dk_x) < 1e-12);
    CHECK(std::fabs(m.dk_y) < 1e-12);
  }
}

TEST_CASE("idler of the degenerate collinear photon is itself") {
  ExperimentGeometry g;
  g.crystal_offset_deg = 0.0;
  const auto s = PhotonKinematics::from_energy(10.5, {g.center_theta_rad(), 0.0});
  const auto i = idler_from_signal(g, s);
  CHECK(i.dir.theta == doctest::Approx(s.dir.theta).epsilon(1e-12));
  CHECK(i.dir.phi == 0.0);
}

TEST_CASE("idler of the idler is the signal") {
  ExperimentGeometry g;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dev(-0.02, 0.02), en(8.0, 13.0);
  for (int n = 0; n < 100; ++n) {
    const auto s = PhotonKinematics::from_energy(en(rng), {g.center_theta_rad() + dev(rng), dev(rng)});
    const auto back = idler_from_signal(g, idler_from_signal(g, s));
    CHECK(std::fabs(back.dir.theta - s.dir.theta) < 1e-9);
    CHECK(std::fabs(back.dir.phi - s.dir.phi) < 1e-9);
  }
}

TEST_CASE("idler without a real direction throws") {
  ExperimentGeometry g;
  CHECK_THROWS_AS(idler_from_signal(g, PhotonKinematics::from_energy(20.0, {0.0, 1.4})), NoSolutionError);
  CHECK_THROWS_AS(idler_from_signal(g, PhotonKinematics::from_energy(21.5, {0.7, 0.0})), NoSolutionError);
}

TEST_CASE("angle ratio law") {
  CHECK(angle_ratio(10.5, 10.5) == -1.0);
  CHECK(angle_ratio(12.5, 8.5) == doctest::Approx(-1.4706).epsilon(1e-4));
  CHECK(angle_ratio(9.5, 11.5) == doctest::Approx(-0.8261).epsilon(1e-4));
}

TEST_CASE("exact solver approaches the small-angle law") {
  ExperimentGeometry g;
  for (double r = 0.6; r <= 1.6001; r += 0.05) {
    const double ws = 21.0 * r / (1.0 + r);
    for (double sign : {-1.0, 1.0}) {
      const double near = exact_angle_ratio(g, ws, sign * deg_to_rad(0.1));
      CHECK(std::fabs(near / angle_ratio(ws, 21.0 - ws) - 1.0) < 0.02);
      const double far = exact_angle_ratio(g, ws, sign * deg_to_rad(0.5));
      CHECK(std::fabs(far / angle_ratio(ws, 21.0 - ws) - 1.0) < 0.05);
    }
  }
  const auto a = exact_angle_ratio(g, 12.5, deg_to_rad(0.001));
  CHECK(a == doctest::Approx(-12.5 / 8.5).epsilon(1e-3));
}

TEST_CASE("pixel to angle conversions") {
  ExperimentGeometry g;
  const auto c = g.ring_center();
  const auto d0 = pixel_to_angle(g, c);
  CHECK(d0.theta == 0.0);
  CHECK(d0.phi == 0.0);
  const auto d = pixel_to_angle(g, {c.x, c.y + 34.2});
  CHECK(rad_to_deg(d.theta) == doctest::Approx(rad_to_deg(std::atan(34.2 * 0.096 / 200.0))).epsilon(1e-12));
  CHECK(rad_to_deg(d.theta) == doctest::Approx(0.94).epsilon(0.01));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(0.0, 263.0), uy(0.0, 131.0);
  for (int n = 0; n < 100; ++n) {
    const PixelCoord p{ux(rng), uy(rng)};
    const auto q = angle_to_pixel(g, pixel_to_angle(g, p));
    CHECK(std::fabs(q.x - p.x) < 1e-9);
    CHECK(std::fabs(q.y - p.y) < 1e-9);
    const auto r = direction_to_pixel(g, pixel_to_direction(g, p));
    CHECK(std::fabs(r.x - p.x) < 1e-9);
    CHECK(std::fabs(r.y - p.y) < 1e-9);
  }
}

TEST_CASE("geometry configuration") {
  auto cfg = KeyValueConfig::parse(
      "[geometry]\nlattice_a_A = 3.567\nhkl = 6 6 0\nbragg_angle_deg = 44.61\ndetector_distance_mm = 250\n");
  const auto g = geometry_from_config(cfg);
  CHECK(g.d_spacing_angstrom == doctest::Approx(3.567 / std::sqrt(72.0)).epsilon(1e-15));
  CHECK(g.detector_distance_mm == 250.0);
  CHECK(g.g_magnitude() == doctest::Approx(2.0 * kPi / g.d_spacing_angstrom).epsilon(1e-15));
  const double s = g.g_magnitude() / (2.0 * g.pump_k());
  CHECK(rad_to_deg(std::asin(s)) == doctest::Approx(rad_to_deg(g.bragg_angle_rad())).epsilon(1e-12));

  CHECK_THROWS_AS(geometry_from_config(KeyValueConfig::parse("[geometry]\nbragg_angle_deg = 44.8\n")), ConfigError);
  CHECK_THROWS_AS(geometry_from_config(KeyValueConfig::parse("[geometry]\ndetector_distance = 200\n")), ConfigError);
  CHECK_THROWS_AS(geometry_from_config(KeyValueConfig::parse("[geometry]\npump_energy_kev = -1\n")), ConfigError);
}

TEST_CASE("boundary column belongs to side A") {
  ExperimentGeometry g;
  CHECK(g.ring_center().x == 131.5);
  CHECK(g.boundary_column() == 131);
}
