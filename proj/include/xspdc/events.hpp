#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace xspdc {

/// One reconstructed photon. Energies are kept on a 1 eV grid and centroids on
/// a 1e-3 px grid so that the CSV round trip is exact.
struct PhotonEvent {
  std::int64_t frame_id = 0;
  int x = 0;
  int y = 0;
  double cx = 0.0;
  double cy = 0.0;
  double energy_kev = 0.0;

  std::int64_t energy_ev() const { return std::llround(energy_kev * 1000.0); }
};

inline double quantize_energy_kev(double kev) { return static_cast<double>(std::llround(kev * 1000.0)) / 1000.0; }
inline double quantize_centroid(double px) { return static_cast<double>(std::llround(px * 1000.0)) / 1000.0; }

/// Orders by frame, then row-major detector position.
inline bool event_order(const PhotonEvent& a, const PhotonEvent& b) {
  if (a.frame_id != b.frame_id) return a.frame_id < b.frame_id;
  if (a.y != b.y) return a.y < b.y;
  if (a.x != b.x) return a.x < b.x;
  if (a.cy != b.cy) return a.cy < b.cy;
  if (a.cx != b.cx) return a.cx < b.cx;
  return a.energy_kev < b.energy_kev;
}

using EventList = std::vector<PhotonEvent>;

}  // namespace xspdc
