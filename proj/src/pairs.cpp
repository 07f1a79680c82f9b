#include "xspdc/pairs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "xspdc/error.hpp"
#include "xspdc/rng.hpp"

namespace xspdc {

void ScanConfig::validate() const {
  if (a_size <= 0 || b_size <= 0 || a_stride <= 0 || b_stride <= 0) {
    throw ConfigError("region sizes and strides must be > 0");
  }
  if (!(tolerance_ev >= 0.0)) throw ConfigError("energy tolerance must be >= 0");
  if (boundary_gap < 0) throw ConfigError("boundary gap must be >= 0");
}

ScanConfig scan_config_from(const KeyValueConfig& cfg, const std::string& p) {
  ScanConfig s;
  s.a_size = static_cast<int>(cfg.get_int(p + "a_size", s.a_size));
  s.a_stride = static_cast<int>(cfg.get_int(p + "a_stride", s.a_size / 2 > 0 ? s.a_size / 2 : 1));
  s.b_size = static_cast<int>(cfg.get_int(p + "b_size", s.b_size));
  s.b_stride = static_cast<int>(cfg.get_int(p + "b_stride", s.b_size / 2 > 0 ? s.b_size / 2 : 1));
  s.tolerance_ev = cfg.get_double(p + "tolerance_ev", s.tolerance_ev);
  s.strict = cfg.get_bool(p + "strict", s.strict);
  s.boundary_gap = static_cast<int>(cfg.get_int(p + "boundary_gap", s.boundary_gap));
  s.validate();
  return s;
}

int side_b_first_column(const ExperimentGeometry& geom, int boundary_gap) {
  return geom.boundary_column() + 1 + boundary_gap;
}

RegionLattice::RegionLattice(const ExperimentGeometry& geom, std::vector<RegionSpec> a, std::vector<RegionSpec> b)
    : width_(geom.n_cols), height_(geom.n_rows), a_(std::move(a)), b_(std::move(b)) {
  const std::size_t n = static_cast<std::size_t>(width_) * height_;
  a_lookup_.assign(n, {});
  b_lookup_.assign(n, {});
  const int boundary = geom.boundary_column();
  auto fill = [&](const std::vector<RegionSpec>& regions, std::vector<std::vector<std::uint32_t>>& lookup, Side side) {
    for (std::uint32_t r = 0; r < regions.size(); ++r) {
      const auto& g = regions[r];
      if (g.side != side || g.width <= 0 || g.height <= 0 || g.x0 < 0 || g.y0 < 0 || g.x0 + g.width > width_ ||
          g.y0 + g.height > height_) {
        throw ConfigError("region outside the detector or on the wrong side");
      }
      const bool ok = side == Side::A ? g.x0 + g.width - 1 <= boundary : g.x0 > boundary;
      if (!ok) throw ConfigError("region crosses the half-plane boundary");
      for (int y = g.y0; y < g.y0 + g.height; ++y) {
        for (int x = g.x0; x < g.x0 + g.width; ++x) lookup[static_cast<std::size_t>(y) * width_ + x].push_back(r);
      }
    }
  };
  fill(a_, a_lookup_, Side::A);
  fill(b_, b_lookup_, Side::B);
}

RegionLattice RegionLattice::scan(const ExperimentGeometry& geom, const ScanConfig& cfg) {
  cfg.validate();
  std::vector<RegionSpec> a, b;
  const int a_end = geom.boundary_column() + 1;
  for (int y = 0; y + cfg.a_size <= geom.n_rows; y += cfg.a_stride) {
    for (int x = 0; x + cfg.a_size <= a_end; x += cfg.a_stride) a.push_back({Side::A, x, y, cfg.a_size, cfg.a_size});
  }
  const int b_begin = side_b_first_column(geom, cfg.boundary_gap);
  for (int y = 0; y + cfg.b_size <= geom.n_rows; y += cfg.b_stride) {
    for (int x = b_begin; x + cfg.b_size <= geom.n_cols; x += cfg.b_stride) {
      b.push_back({Side::B, x, y, cfg.b_size, cfg.b_size});
    }
  }
  if (a.empty() || b.empty()) throw ConfigError("regions do not fit in the half-planes");
  return RegionLattice(geom, std::move(a), std::move(b));
}

const std::vector<std::uint32_t>& RegionLattice::covering(Side side, int x, int y) const {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return empty_;
  const std::size_t i = static_cast<std::size_t>(y) * width_ + x;
  return side == Side::A ? a_lookup_[i] : b_lookup_[i];
}

void RegionLattice::set_exclusion(const std::vector<std::uint8_t>& mask) {
  if (mask.size() != static_cast<std::size_t>(width_) * height_) {
    throw DimensionError("exclusion mask does not match the detector");
  }
  exclusion_ = mask;
}

double RegionLattice::live_fraction(const RegionSpec& r) const {
  int n = 0;
  for (int y = r.y0; y < r.y0 + r.height; ++y) {
    for (int x = r.x0; x < r.x0 + r.width; ++x) n += live(x, y) ? 1 : 0;
  }
  return static_cast<double>(n) / r.area();
}

CandidateSplit prefilter_split(const EventList& events, double pump_energy_kev, const ExperimentGeometry& geom,
                               const WindowPair& windows, int boundary_gap) {
  windows.check_conjugate(pump_energy_kev);
  const int boundary = geom.boundary_column();
  const int b_begin = side_b_first_column(geom, boundary_gap);
  const double half = 0.5 * pump_energy_kev;
  // A window that straddles the half energy (the degenerate case) keeps its
  // photons by half-plane membership alone.
  const bool a_straddles = windows.signal.contains(half);
  const bool b_straddles = windows.idler.contains(half);
  CandidateSplit out;
  for (const auto& e : events) {
    if (e.x <= boundary) {
      if (windows.signal.contains(e.energy_kev) && (a_straddles || e.energy_kev > half)) out.a.push_back(e);
    } else if (e.x >= b_begin) {
      if (windows.idler.contains(e.energy_kev) && (b_straddles || e.energy_kev < half)) out.b.push_back(e);
    }
  }
  return out;
}

CoincidenceScanner::CoincidenceScanner(const RegionLattice& lattice, const ScanConfig& cfg, double pump_energy_kev)
    : lattice_(lattice), cfg_(cfg), pump_ev_(std::llround(pump_energy_kev * 1000.0)) {
  cfg_.validate();
  map_.n_a = lattice.a().size();
  map_.n_b = lattice.b().size();
  map_.counts.assign(map_.n_a * map_.n_b, 0);
  map_.hit_offsets.push_back(0);
  a_slot_.assign(map_.n_a, -1);
  b_slot_.assign(map_.n_b, -1);
}

namespace {
constexpr std::int32_t kEmpty = -1;
constexpr std::int32_t kCrowded = -2;
}  // namespace

void CoincidenceScanner::occupy(Side side, const PhotonEvent& e, int candidate_index) {
  auto& slots = side == Side::A ? a_slot_ : b_slot_;
  auto& touched = side == Side::A ? a_touched_ : b_touched_;
  for (auto r : lattice_.covering(side, e.x, e.y)) {
    if (slots[r] == kEmpty) {
      slots[r] = candidate_index;
      touched.push_back(r);
    } else {
      slots[r] = kCrowded;
    }
  }
}

void CoincidenceScanner::add_frame(std::int64_t frame_id, const PhotonEvent* a, std::size_t na, const PhotonEvent* b,
                                   std::size_t nb, const PhotonEvent* all, std::size_t nall) {
  if (na == 0 || nb == 0) return;
  if (na > 0xffff || nb > 0xffff) throw DomainError("too many candidates in one frame");
  for (std::size_t i = 0; i < na; ++i) occupy(Side::A, a[i], static_cast<int>(i));
  for (std::size_t i = 0; i < nb; ++i) occupy(Side::B, b[i], static_cast<int>(i));
  if (cfg_.strict && all != nullptr) {
    // Every extra photon inside an occupied region spoils it; candidates are
    // recognised by identity of their reconstructed record.
    auto same = [](const PhotonEvent& p, const PhotonEvent& q) {
      return p.x == q.x && p.y == q.y && p.cx == q.cx && p.cy == q.cy && p.energy_kev == q.energy_kev;
    };
    for (std::size_t k = 0; k < nall; ++k) {
      const auto& e = all[k];
      for (Side side : {Side::A, Side::B}) {
        auto& slots = side == Side::A ? a_slot_ : b_slot_;
        for (auto r : lattice_.covering(side, e.x, e.y)) {
          if (slots[r] < 0) continue;
          const PhotonEvent& cand = side == Side::A ? a[slots[r]] : b[slots[r]];
          if (!same(cand, e)) slots[r] = kCrowded;
        }
      }
    }
  }

  const std::int64_t tol = std::llround(cfg_.tolerance_ev);
  frame_hits_.clear();
  for (auto ra : a_touched_) {
    const std::int32_t ia = a_slot_[ra];
    if (ia < 0) continue;
    const std::int64_t ea = a[ia].energy_ev();
    for (auto rb : b_touched_) {
      const std::int32_t ib = b_slot_[rb];
      if (ib < 0) continue;
      if (std::llabs(ea + b[ib].energy_ev() - pump_ev_) > tol) continue;
      const std::uint32_t cell = static_cast<std::uint32_t>(ra * map_.n_b + rb);
      ++map_.counts[cell];
      frame_hits_.push_back((static_cast<std::uint64_t>(ia) << 48) | (static_cast<std::uint64_t>(ib) << 32) | cell);
    }
  }
  std::sort(frame_hits_.begin(), frame_hits_.end());
  for (std::size_t k = 0; k < frame_hits_.size();) {
    const std::uint64_t key = frame_hits_[k] >> 32;
    map_.pairs.push_back({frame_id, a[key >> 16], b[key & 0xffff]});
    while (k < frame_hits_.size() && (frame_hits_[k] >> 32) == key) {
      map_.hit_cells.push_back(static_cast<std::uint32_t>(frame_hits_[k] & 0xffffffffu));
      ++k;
    }
    map_.hit_offsets.push_back(static_cast<std::uint32_t>(map_.hit_cells.size()));
  }

  for (auto r : a_touched_) a_slot_[r] = kEmpty;
  for (auto r : b_touched_) b_slot_[r] = kEmpty;
  a_touched_.clear();
  b_touched_.clear();
}

PairMap CoincidenceScanner::finish(std::int64_t frames, double exposure_h) {
  map_.frames = frames;
  map_.exposure_h = exposure_h;
  PairMap out = std::move(map_);
  map_ = PairMap{};
  map_.n_a = out.n_a;
  map_.n_b = out.n_b;
  map_.counts.assign(map_.n_a * map_.n_b, 0);
  map_.hit_offsets.push_back(0);
  return out;
}

namespace {

/// Walks frames of candidate lists (and of all events in strict mode).
void feed(CoincidenceScanner& scanner, const EventList& all, const CandidateSplit& c, bool strict) {
  std::size_t ia = 0, ib = 0, iall = 0;
  while (ia < c.a.size() && ib < c.b.size()) {
    const std::int64_t fa = c.a[ia].frame_id, fb = c.b[ib].frame_id;
    if (fa < fb) {
      while (ia < c.a.size() && c.a[ia].frame_id == fa) ++ia;
      continue;
    }
    if (fb < fa) {
      while (ib < c.b.size() && c.b[ib].frame_id == fb) ++ib;
      continue;
    }
    std::size_t ea = ia, eb = ib;
    while (ea < c.a.size() && c.a[ea].frame_id == fa) ++ea;
    while (eb < c.b.size() && c.b[eb].frame_id == fa) ++eb;
    const PhotonEvent* all_ptr = nullptr;
    std::size_t nall = 0;
    if (strict) {
      while (iall < all.size() && all[iall].frame_id < fa) ++iall;
      std::size_t e = iall;
      while (e < all.size() && all[e].frame_id == fa) ++e;
      all_ptr = all.data() + iall;
      nall = e - iall;
      iall = e;
    }
    scanner.add_frame(fa, c.a.data() + ia, ea - ia, c.b.data() + ib, eb - ib, all_ptr, nall);
    ia = ea;
    ib = eb;
  }
}

void check_sorted(const EventList& events, const char* what) {
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (events[i].frame_id < events[i - 1].frame_id) {
      throw FormatError(std::string(what) + " must be sorted by frame");
    }
  }
}

}  // namespace

PairMap scan_coincidences(const EventList& all_events, const CandidateSplit& candidates, const RegionLattice& lattice,
                          const ScanConfig& cfg, double pump_energy_kev, std::int64_t frames, double exposure_h) {
  check_sorted(candidates.a, "A candidates");
  check_sorted(candidates.b, "B candidates");
  if (cfg.strict) check_sorted(all_events, "event list");
  CoincidenceScanner scanner(lattice, cfg, pump_energy_kev);
  feed(scanner, all_events, candidates, cfg.strict);
  return scanner.finish(frames, exposure_h);
}

namespace {

double rect_min_distance(const ExperimentGeometry& geom, const RegionSpec& r) {
  const PixelCoord c = geom.ring_center();
  const double sx = geom.pitch_x_mm() / geom.reference_pitch_mm();
  const double sy = geom.pitch_y_mm() / geom.reference_pitch_mm();
  const double lo_x = r.x0 - 0.5, hi_x = r.x0 + r.width - 0.5;
  const double lo_y = r.y0 - 0.5, hi_y = r.y0 + r.height - 0.5;
  const double dx = std::max({lo_x - c.x, 0.0, c.x - hi_x}) * sx;
  const double dy = std::max({lo_y - c.y, 0.0, c.y - hi_y}) * sy;
  return std::hypot(dx, dy);
}

double rect_max_distance(const ExperimentGeometry& geom, const RegionSpec& r) {
  const PixelCoord c = geom.ring_center();
  const double sx = geom.pitch_x_mm() / geom.reference_pitch_mm();
  const double sy = geom.pitch_y_mm() / geom.reference_pitch_mm();
  const double dx = std::max(std::fabs(r.x0 - 0.5 - c.x), std::fabs(r.x0 + r.width - 0.5 - c.x)) * sx;
  const double dy = std::max(std::fabs(r.y0 - 0.5 - c.y), std::fabs(r.y0 + r.height - 0.5 - c.y)) * sy;
  return std::hypot(dx, dy);
}

}  // namespace

RegionLattice signal_free_regions(const ExperimentGeometry& geom, const ScanConfig& cfg, double r_inner,
                                  double r_outer) {
  ScanConfig tiling = cfg;
  tiling.a_stride = cfg.a_size;
  tiling.b_stride = cfg.b_size;
  const auto full = RegionLattice::scan(geom, tiling);
  auto keep = [&](const RegionSpec& r) {
    return rect_max_distance(geom, r) < r_inner || rect_min_distance(geom, r) > r_outer;
  };
  std::vector<RegionSpec> a, b;
  for (const auto& r : full.a()) {
    if (keep(r)) a.push_back(r);
  }
  for (const auto& r : full.b()) {
    if (keep(r)) b.push_back(r);
  }
  if (a.empty() || b.empty()) throw ConfigError("no signal-free regions outside the ring annulus");
  return RegionLattice(geom, std::move(a), std::move(b));
}

AccidentalEstimate estimate_accidentals(const EventList& all_events, const CandidateSplit& candidates,
                                        const RegionLattice& signal_free, const ScanConfig& cfg,
                                        double pump_energy_kev, std::int64_t frames, double exposure_h) {
  if (!(exposure_h > 0.0)) throw ConfigError("accidental estimate needs a positive exposure");
  const PairMap m = scan_coincidences(all_events, candidates, signal_free, cfg, pump_energy_kev, frames, exposure_h);
  AccidentalEstimate est;
  for (auto c : m.counts) est.counts += c;
  est.region_pairs = static_cast<std::int64_t>(m.counts.size());
  double live_a = 0.0, live_b = 0.0;
  for (const auto& r : signal_free.a()) live_a += signal_free.live_fraction(r);
  for (const auto& r : signal_free.b()) live_b += signal_free.live_fraction(r);
  est.live_region_pairs = live_a * live_b;
  est.exposure_h = exposure_h;
  if (!(est.live_region_pairs > 0.0)) throw ConfigError("signal-free regions hold no live pixels");
  const double denom = est.live_region_pairs * exposure_h;
  est.rate_per_hour = static_cast<double>(est.counts) / denom;
  est.stderr_per_hour = std::sqrt(static_cast<double>(est.counts)) / denom;
  est.low_statistics = est.counts < 10;
  return est;
}

namespace {

/// Union measure of the selected cells' live A x B pixel products, in units of
/// one region pair. Pixels sharing the same covering-region set are grouped.
double covered_measure(const RegionLattice& lattice, const std::vector<std::uint8_t>& cells) {
  if (lattice.a().empty() || lattice.b().empty()) return 0.0;
  const std::size_t nb = lattice.b().size();
  auto atoms = [&](Side side, const std::vector<RegionSpec>& regions) {
    std::map<std::vector<std::uint32_t>, double> groups;
    std::vector<std::pair<int, int>> seen;
    int x0 = std::numeric_limits<int>::max(), x1 = 0, y0 = std::numeric_limits<int>::max(), y1 = 0;
    for (const auto& r : regions) {
      x0 = std::min(x0, r.x0);
      y0 = std::min(y0, r.y0);
      x1 = std::max(x1, r.x0 + r.width);
      y1 = std::max(y1, r.y0 + r.height);
    }
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        const auto& cov = lattice.covering(side, x, y);
        if (!cov.empty() && lattice.live(x, y)) groups[cov] += 1.0;
      }
    }
    return std::vector<std::pair<std::vector<std::uint32_t>, double>>(groups.begin(), groups.end());
  };
  const auto a_atoms = atoms(Side::A, lattice.a());
  const auto b_atoms = atoms(Side::B, lattice.b());

  double total = 0.0;
  std::vector<std::uint8_t> b_selected(nb);
  for (const auto& [a_cov, a_px] : a_atoms) {
    std::fill(b_selected.begin(), b_selected.end(), 0);
    bool any = false;
    for (auto ra : a_cov) {
      for (std::size_t rb = 0; rb < nb; ++rb) {
        if (cells[ra * nb + rb]) {
          b_selected[rb] = 1;
          any = true;
        }
      }
    }
    if (!any) continue;
    double b_px = 0.0;
    for (const auto& [b_cov, px] : b_atoms) {
      for (auto rb : b_cov) {
        if (b_selected[rb]) {
          b_px += px;
          break;
        }
      }
    }
    total += a_px * b_px;
  }
  return total / (static_cast<double>(lattice.a()[0].area()) * lattice.b()[0].area());
}

std::int64_t pairs_in_cells(const PairMap& map, const std::vector<std::uint8_t>& cells,
                            std::vector<std::uint32_t>* which) {
  std::int64_t n = 0;
  for (std::size_t p = 0; p < map.pairs.size(); ++p) {
    for (auto k = map.hit_offsets[p]; k < map.hit_offsets[p + 1]; ++k) {
      if (cells[map.hit_cells[k]]) {
        ++n;
        if (which) which->push_back(static_cast<std::uint32_t>(p));
        break;
      }
    }
  }
  return n;
}

}  // namespace

void threshold_subtract(PairMap& map, const RegionLattice& lattice, double fraction,
                        const AccidentalEstimate& accidentals) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("threshold fraction must lie in [0, 1]");
  ThresholdSummary t;
  t.fraction = fraction;
  map.retained_cells.assign(map.counts.size(), 0);
  map.retained_pairs.clear();
  t.max_count = map.counts.empty() ? 0 : *std::max_element(map.counts.begin(), map.counts.end());
  t.level = fraction * t.max_count;
  if (t.max_count > 0) {
    for (std::size_t c = 0; c < map.counts.size(); ++c) {
      if (map.counts[c] >= t.level) {
        map.retained_cells[c] = 1;
        ++t.retained_cells;
      }
    }
  }
  t.retained_pairs = pairs_in_cells(map, map.retained_cells, &map.retained_pairs);
  t.covered_region_pairs = t.retained_cells > 0 ? covered_measure(lattice, map.retained_cells) : 0.0;
  t.expected_accidentals = accidentals.rate_per_hour * map.exposure_h * t.covered_region_pairs;
  t.true_pairs = static_cast<double>(t.retained_pairs) - t.expected_accidentals;
  if (map.exposure_h > 0.0) {
    t.retained_rate_per_hour = t.retained_pairs / map.exposure_h;
    t.true_rate_per_hour = t.true_pairs / map.exposure_h;
    const double acc_err = accidentals.stderr_per_hour * map.exposure_h * t.covered_region_pairs;
    t.true_rate_stderr = std::sqrt(static_cast<double>(t.retained_pairs) + acc_err * acc_err) / map.exposure_h;
  }
  const double denom = t.retained_pairs + t.expected_accidentals;
  t.contrast = denom > 0.0 ? (t.retained_pairs - t.expected_accidentals) / denom : 0.0;
  t.all_below = t.retained_pairs == 0;
  map.threshold = t;
  map.accidentals = accidentals;
}

EventList decorrelate(const EventList& events, ControlMode mode, std::uint64_t seed, std::int64_t frames) {
  if (events.empty()) throw ConfigError("negative control needs a nonempty dataset");
  if (frames <= 0) throw ConfigError("negative control needs a positive frame count");
  EventList out = events;
  if (mode == ControlMode::frame_shuffle) {
    for (std::size_t i = 0; i < out.size(); ++i) {
      CounterRng rng(seed, i, 0x73687566ULL);
      out[i].frame_id = static_cast<std::int64_t>(rng.uniform() * static_cast<double>(frames));
    }
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      CounterRng rng(seed, i, 0x656e7267ULL);
      out[i].energy_kev = events[static_cast<std::size_t>(rng.uniform() * static_cast<double>(events.size()))].energy_kev;
    }
  }
  std::stable_sort(out.begin(), out.end(), event_order);
  return out;
}

RegionExcess region_excess(const PairMap& map, const RegionLattice& lattice, const std::vector<std::uint8_t>& cells,
                           const AccidentalEstimate& accidentals) {
  if (cells.size() != map.counts.size()) throw DimensionError("cell selection does not match the pair map");
  RegionExcess r;
  r.observed = pairs_in_cells(map, cells, nullptr);
  r.expected = accidentals.rate_per_hour * map.exposure_h * covered_measure(lattice, cells);
  if (r.expected > 0.0) {
    r.significance = (r.observed - r.expected) / std::sqrt(r.expected);
  } else {
    r.significance = r.observed > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return r;
}

std::vector<double> retained_pair_image(const PairMap& map, int width, int height) {
  std::vector<double> img(static_cast<std::size_t>(width) * height, 0.0);
  for (auto p : map.retained_pairs) {
    for (const PhotonEvent* e : {&map.pairs[p].a, &map.pairs[p].b}) {
      if (e->x >= 0 && e->y >= 0 && e->x < width && e->y < height) {
        img[static_cast<std::size_t>(e->y) * width + e->x] += 1.0;
      }
    }
  }
  return img;
}

}  // namespace xspdc
