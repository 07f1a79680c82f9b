#include "xspdc/recon.hpp"

#include <algorithm>
#include <cmath>

#include "xspdc/error.hpp"
#include "xspdc/io.hpp"
#include "xspdc/kernels.hpp"

namespace xspdc {

CalibrationSet CalibrationSet::identity(int width, int height, double adu_per_kev) {
  CalibrationSet c;
  c.width = width;
  c.height = height;
  c.gain.assign(static_cast<std::size_t>(width) * height, 1.0f);
  c.cti.assign(width, 0.0);
  c.mask = build_exclusion_mask(width, height, {}, 1);
  c.adu_per_kev = adu_per_kev;
  return c;
}

void CalibrationSet::validate() const {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (width <= 0 || height <= 0) throw DimensionError("calibration has no pixels");
  if (gain.size() != n) throw DimensionError("gain map does not match the detector size");
  if (cti.size() != static_cast<std::size_t>(width)) throw DimensionError("CTI vector does not match the column count");
  if (mask.size() != n) throw DimensionError("mask does not match the detector size");
  for (float g : gain) {
    if (!(g > 0.0f)) throw ConfigError("gain must be > 0 everywhere");
  }
  for (double c : cti) {
    if (!(c >= 0.0 && c < 1.0)) throw ConfigError("CTI must lie in [0, 1)");
  }
  if (!(adu_per_kev > 0.0)) throw ConfigError("ADU per keV must be > 0");
  if (!(noise_rms_adu > 0.0) || !(threshold_sigma > 0.0)) throw ConfigError("noise threshold must be > 0");
}

std::vector<float> CalibrationSet::inverse_response() const {
  validate();
  std::vector<float> inv(gain.size());
  for (int x = 0; x < width; ++x) {
    const double keep = 1.0 - cti[x];
    double transfer = 1.0;
    for (int y = 0; y < height; ++y) {
      const std::size_t i = static_cast<std::size_t>(y) * width + x;
      inv[i] = mask[i] ? 0.0f : static_cast<float>(1.0 / (static_cast<double>(gain[i]) * transfer));
      transfer *= keep;
    }
  }
  return inv;
}

std::vector<std::uint8_t> build_exclusion_mask(int width, int height, const std::vector<std::pair<int, int>>& defects,
                                               int border) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height, 0);
  for (const auto& [x, y] : defects) {
    if (x < 0 || y < 0 || x >= width || y >= height) throw ConfigError("mask pixel outside the detector");
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int xx = x + dx, yy = y + dy;
        if (xx >= 0 && yy >= 0 && xx < width && yy < height) mask[static_cast<std::size_t>(yy) * width + xx] = 1;
      }
    }
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (x < border || y < border || x >= width - border || y >= height - border) {
        mask[static_cast<std::size_t>(y) * width + x] = 1;
      }
    }
  }
  return mask;
}

std::vector<std::pair<int, int>> line_defects(int width, int height, const std::vector<std::int64_t>& rows,
                                              const std::vector<std::int64_t>& cols) {
  std::vector<std::pair<int, int>> out;
  for (auto r : rows) {
    if (r < 0 || r >= height) throw ConfigError("masked row outside the detector");
    for (int x = 0; x < width; ++x) out.emplace_back(x, static_cast<int>(r));
  }
  for (auto c : cols) {
    if (c < 0 || c >= width) throw ConfigError("masked column outside the detector");
    for (int y = 0; y < height; ++y) out.emplace_back(static_cast<int>(c), y);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void correct_frame_into(const std::uint16_t* raw, const std::vector<float>& inverse, CorrectedFrame& out) {
  out.adu.resize(inverse.size());
  kernels().correct(raw, inverse.data(), out.adu.data(), inverse.size());
}

CorrectedFrame correct_frame(const std::vector<std::uint16_t>& raw, int width, int height, const CalibrationSet& cal) {
  if (width != cal.width || height != cal.height || raw.size() != static_cast<std::size_t>(width) * height) {
    throw DimensionError("frame is " + std::to_string(width) + "x" + std::to_string(height) + " but calibration is " +
                         std::to_string(cal.width) + "x" + std::to_string(cal.height));
  }
  CorrectedFrame out;
  out.width = width;
  out.height = height;
  correct_frame_into(raw.data(), cal.inverse_response(), out);
  return out;
}

namespace {

Topology classify(const std::vector<ClusterPixel>& px, bool straight_triples) {
  int x0 = px[0].x, x1 = px[0].x, y0 = px[0].y, y1 = px[0].y;
  for (const auto& p : px) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
  switch (px.size()) {
    case 1:
      return Topology::single;
    case 2:
      return Topology::dual;
    case 3:
      if (bw == 2 && bh == 2) return Topology::triple;
      return straight_triples ? Topology::triple : Topology::rejected;
    case 4:
      return bw == 2 && bh == 2 ? Topology::quad : Topology::rejected;
    default:
      return Topology::rejected;
  }
}

struct Scratch {
  std::vector<int> label;
  std::vector<std::uint32_t> above;
  std::vector<std::uint32_t> queue;
  std::vector<std::uint8_t> halo;
};

}  // namespace

std::vector<Cluster> extract_clusters(const CorrectedFrame& frame, const CalibrationSet& cal) {
  const int w = frame.width, h = frame.height;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (w != cal.width || h != cal.height || frame.adu.size() != n) throw DimensionError("frame/calibration mismatch");

  thread_local Scratch s;
  if (s.label.size() != n) {
    s.label.assign(n, -1);
    s.halo.assign(n, 0);
  }
  s.above.resize(n);
  const float thr = static_cast<float>(cal.threshold_adu());
  const std::size_t count = kernels().above_threshold(frame.adu.data(), thr, s.above.data(), n);

  std::vector<Cluster> clusters;
  std::vector<std::uint8_t> touches_mask;
  auto is_masked = [&](int x, int y) {
    const std::size_t i = static_cast<std::size_t>(y) * w + x;
    return cal.mask[i] != 0 || frame.adu[i] < 0.0f;
  };

  for (std::size_t k = 0; k < count; ++k) {
    const std::uint32_t seed = s.above[k];
    if (s.label[seed] >= 0) continue;
    const int id = static_cast<int>(clusters.size());
    Cluster c;
    bool near_mask = false;
    s.queue.clear();
    s.queue.push_back(seed);
    s.label[seed] = id;
    for (std::size_t q = 0; q < s.queue.size(); ++q) {
      const std::uint32_t i = s.queue[q];
      const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
      c.pixels.push_back({x, y, frame.adu[i]});
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int d = 0; d < 4; ++d) {
        if (nx[d] < 0 || ny[d] < 0 || nx[d] >= w || ny[d] >= h) continue;
        const std::uint32_t j = static_cast<std::uint32_t>(ny[d]) * w + nx[d];
        if (is_masked(nx[d], ny[d])) near_mask = true;
        if (s.label[j] < 0 && frame.adu[j] > thr) {
          s.label[j] = id;
          s.queue.push_back(j);
        }
      }
    }
    std::sort(c.pixels.begin(), c.pixels.end(),
              [](const ClusterPixel& a, const ClusterPixel& b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
    double sx = 0.0, sy = 0.0, st = 0.0;
    for (const auto& p : c.pixels) {
      st += p.adu;
      sx += p.adu * p.x;
      sy += p.adu * p.y;
    }
    c.total_adu = st;
    c.cx = sx / st;
    c.cy = sy / st;
    c.topology = classify(c.pixels, cal.allow_straight_triples);
    touches_mask.push_back(near_mask ? 1 : 0);
    clusters.push_back(std::move(c));
  }

  // Halos of shape-rejected clusters.
  std::vector<std::uint32_t> halo_touched;
  for (const auto& c : clusters) {
    if (c.accepted()) continue;
    for (const auto& p : c.pixels) {
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = p.x + dx, yy = p.y + dy;
          if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
          const std::uint32_t j = static_cast<std::uint32_t>(yy) * w + xx;
          if (!s.halo[j]) {
            s.halo[j] = 1;
            halo_touched.push_back(j);
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    auto& c = clusters[i];
    if (!c.accepted()) continue;
    bool hit = touches_mask[i] != 0;
    for (const auto& p : c.pixels) hit = hit || s.halo[static_cast<std::size_t>(p.y) * w + p.x] != 0;
    if (hit) c.topology = Topology::rejected;
  }

  for (auto j : halo_touched) s.halo[j] = 0;
  for (const auto& c : clusters) {
    for (const auto& p : c.pixels) s.label[static_cast<std::size_t>(p.y) * w + p.x] = -1;
  }
  return clusters;
}

EventList clusters_to_events(const std::vector<Cluster>& clusters, const CalibrationSet& cal, std::int64_t frame_id) {
  EventList out;
  for (const auto& c : clusters) {
    if (!c.accepted()) continue;
    PhotonEvent e;
    e.frame_id = frame_id;
    e.cx = quantize_centroid(c.cx);
    e.cy = quantize_centroid(c.cy);
    e.x = static_cast<int>(std::lround(c.cx));
    e.y = static_cast<int>(std::lround(c.cy));
    e.energy_kev = quantize_energy_kev(c.total_adu / cal.adu_per_kev);
    if (e.energy_kev <= 0.0 || cal.masked(e.x, e.y)) continue;
    out.push_back(e);
  }
  std::sort(out.begin(), out.end(), event_order);
  return out;
}

FrameReconstructor::FrameReconstructor(const CalibrationSet& cal) : cal_(cal), inverse_(cal.inverse_response()) {
  frame_.width = cal.width;
  frame_.height = cal.height;
}

void FrameReconstructor::process(const std::uint16_t* raw, std::int64_t frame_id, EventList& out) {
  correct_frame_into(raw, inverse_, frame_);
  const auto events = clusters_to_events(extract_clusters(frame_, cal_), cal_, frame_id);
  out.insert(out.end(), events.begin(), events.end());
}

CalibrationSet calibration_from(const KeyValueConfig& cfg, int width, int height, double adu_per_kev,
                                const std::string& gain_path, const std::string& cti_path,
                                const std::string& mask_path) {
  CalibrationSet cal;
  cal.width = width;
  cal.height = height;
  cal.adu_per_kev = adu_per_kev;
  cal.noise_rms_adu = cfg.get_double("recon.noise_rms_adu", cal.noise_rms_adu);
  cal.threshold_sigma = cfg.get_double("recon.threshold_sigma", cal.threshold_sigma);
  cal.allow_straight_triples = cfg.get_bool("recon.allow_straight_triples", false);
  const int border = static_cast<int>(cfg.get_int("recon.border_px", 1));
  if (border < 0) throw ConfigError("recon.border_px must be >= 0");

  if (!gain_path.empty()) {
    const auto m = read_matrix_csv(gain_path);
    if (m.width != width || m.height != height) throw DimensionError("gain map " + gain_path + " has the wrong size");
    cal.gain.assign(m.values.begin(), m.values.end());
  } else {
    cal.gain.assign(static_cast<std::size_t>(width) * height, 1.0f);
  }
  cal.cti = cti_path.empty() ? std::vector<double>(width, 0.0) : read_cti_csv(cti_path);
  if (static_cast<int>(cal.cti.size()) != width) throw DimensionError("CTI file " + cti_path + " has the wrong size");
  const auto defects = mask_path.empty() ? std::vector<std::pair<int, int>>{} : read_mask_csv(mask_path);
  cal.mask = build_exclusion_mask(width, height, defects, border);
  cal.validate();
  return cal;
}

}  // namespace xspdc
