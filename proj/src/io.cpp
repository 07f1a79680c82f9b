#include "xspdc/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "json.hpp"
#include "xspdc/error.hpp"

namespace xspdc {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "raw frame I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'N', 'C', 'F'};

template <class T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw FormatError("cannot open " + path.string());
  return in;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto c = line.find(',', pos);
    out.push_back(line.substr(pos, c == std::string_view::npos ? std::string_view::npos : c - pos));
    if (c == std::string_view::npos) break;
    pos = c + 1;
  }
  return out;
}

template <class T>
T parse_number(std::string_view s, const fs::path& path, std::size_t line_no) {
  T v{};
  const auto* b = s.data();
  const auto* e = s.data() + s.size();
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) {
    throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

}  // namespace

std::string format_double(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

RawFrameWriter::RawFrameWriter(const fs::path& path, std::uint32_t width, std::uint32_t height, double adu_per_kev,
                               std::uint32_t suppress_adu) {
  ensure_parent(path);
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw FormatError("cannot create " + path.string());
  header_.version = suppress_adu > 0 ? 2 : 1;
  header_.width = width;
  header_.height = height;
  header_.adu_per_kev = adu_per_kev;
  header_.suppress_adu = suppress_adu;
  out_.write(kMagic, 4);
  put(out_, header_.version);
  put(out_, header_.width);
  put(out_, header_.height);
  put(out_, header_.frame_count);
  put(out_, header_.adu_per_kev);
  if (header_.sparse()) put(out_, header_.suppress_adu);
}

RawFrameWriter::~RawFrameWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void RawFrameWriter::write(const std::uint16_t* frame) {
  const std::size_t n = header_.frame_pixels();
  if (!header_.sparse()) {
    out_.write(reinterpret_cast<const char*>(frame), static_cast<std::streamsize>(n * sizeof(std::uint16_t)));
  } else {
    buffer_.resize(4);
    std::uint32_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (frame[i] < header_.suppress_adu) continue;
      const auto idx = static_cast<std::uint32_t>(i);
      const char* pi = reinterpret_cast<const char*>(&idx);
      const char* pv = reinterpret_cast<const char*>(&frame[i]);
      buffer_.insert(buffer_.end(), pi, pi + 4);
      buffer_.insert(buffer_.end(), pv, pv + 2);
      ++count;
    }
    std::memcpy(buffer_.data(), &count, 4);
    out_.write(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  }
  ++header_.frame_count;
}

void RawFrameWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_.seekp(16);
  put(out_, header_.frame_count);
  out_.close();
  if (!out_) throw FormatError("failed writing raw frame file");
}

RawFrameReader::RawFrameReader(const fs::path& path) : path_(path) {
  in_ = open_input(path, std::ios::binary);
  char magic[4] = {};
  in_.read(magic, 4);
  if (!in_ || std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path.string() + ": not a PNCF raw frame file");
  header_.version = get<std::uint32_t>(in_);
  header_.width = get<std::uint32_t>(in_);
  header_.height = get<std::uint32_t>(in_);
  header_.frame_count = get<std::uint64_t>(in_);
  header_.adu_per_kev = get<double>(in_);
  if (!in_) throw FormatError(path.string() + ": truncated header");
  if (header_.version != 1 && header_.version != 2) {
    throw FormatError(path.string() + ": unsupported version " + std::to_string(header_.version));
  }
  if (header_.width == 0 || header_.height == 0) throw FormatError(path.string() + ": empty frame dimensions");
  if (!(header_.adu_per_kev > 0.0)) throw FormatError(path.string() + ": ADU per keV must be > 0");
  if (header_.sparse()) {
    header_.suppress_adu = get<std::uint32_t>(in_);
    if (!in_ || header_.suppress_adu == 0) throw FormatError(path.string() + ": bad zero-suppression header");
    return;
  }
  const auto expected = RawFrameHeader::kBytes + header_.frame_count * header_.frame_pixels() * sizeof(std::uint16_t);
  if (fs::file_size(path) != expected) {
    throw FormatError(path.string() + ": payload size does not match " + std::to_string(header_.frame_count) +
                      " frames");
  }
}

bool RawFrameReader::next(std::vector<std::uint16_t>& frame) {
  if (read_ >= header_.frame_count) return false;
  const std::size_t n = header_.frame_pixels();
  frame.resize(n);
  if (!header_.sparse()) {
    in_.read(reinterpret_cast<char*>(frame.data()), static_cast<std::streamsize>(n * sizeof(std::uint16_t)));
    if (!in_) throw FormatError(path_.string() + ": truncated raw frame payload");
  } else {
    std::fill(frame.begin(), frame.end(), std::uint16_t{0});
    const auto count = get<std::uint32_t>(in_);
    if (!in_ || count > n) throw FormatError(path_.string() + ": bad sparse frame length");
    buffer_.resize(static_cast<std::size_t>(count) * 6);
    in_.read(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
    if (!in_) throw FormatError(path_.string() + ": truncated raw frame payload");
    for (std::uint32_t k = 0; k < count; ++k) {
      std::uint32_t idx;
      std::uint16_t v;
      std::memcpy(&idx, buffer_.data() + 6 * k, 4);
      std::memcpy(&v, buffer_.data() + 6 * k + 4, 2);
      if (idx >= n) throw FormatError(path_.string() + ": sparse pixel index out of range");
      frame[idx] = v;
    }
  }
  ++read_;
  if (read_ == header_.frame_count && in_.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path_.string() + ": trailing bytes after the last frame");
  }
  return true;
}

void write_matrix_csv(const fs::path& path, int width, int height, const std::vector<double>& values) {
  if (values.size() != static_cast<std::size_t>(width) * height) throw DimensionError("matrix size mismatch");
  std::string text;
  text.reserve(values.size() * 12);
  char buf[40];
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const int len = std::snprintf(buf, sizeof buf, "%.9g", values[static_cast<std::size_t>(y) * width + x]);
      if (x) text.push_back(',');
      text.append(buf, len);
    }
    text.push_back('\n');
  }
  write_text_file(path, text);
}

Matrix read_matrix_csv(const fs::path& path) {
  auto in = open_input(path);
  Matrix m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split_commas(line);
    if (m.height == 0) {
      m.width = static_cast<int>(cells.size());
    } else if (static_cast<int>(cells.size()) != m.width) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": ragged matrix row");
    }
    for (auto c : cells) m.values.push_back(parse_number<double>(c, path, line_no));
    ++m.height;
  }
  if (m.height == 0) throw FormatError(path.string() + ": empty matrix");
  return m;
}

void write_pgm(const fs::path& path, int width, int height, const std::vector<double>& values) {
  const double peak = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  std::string text = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (double v : values) {
    const double s = peak > 0.0 ? std::clamp(v / peak, 0.0, 1.0) : 0.0;
    text.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * s))));
  }
  write_text_file(path, text);
}

namespace {

json window_json(const EnergyWindow& w) { return json::array({w.low_kev, w.high_kev}); }

EnergyWindow window_from(const json& j) { return EnergyWindow{j.at(0).get<double>(), j.at(1).get<double>()}; }

}  // namespace

void write_map(const fs::path& stem, const FarFieldMap& map) {
  write_matrix_csv(fs::path(stem).concat(".csv"), map.width, map.height, map.values);
  json meta;
  meta["signal_window_kev"] = window_json(map.windows.signal);
  meta["idler_window_kev"] = window_json(map.windows.idler);
  meta["geometry_hash"] = map.geometry_hash;
  meta["normalization"] = map.normalization == Normalization::relative ? "relative" : "pairs_per_hour";
  meta["raw_peak"] = map.raw_peak;
  meta["pairs_per_hour_per_unit"] = map.pairs_per_hour_per_unit;
  meta["width"] = map.width;
  meta["height"] = map.height;
  write_text_file(fs::path(stem).concat(".json"), meta.dump(2) + "\n");
  write_pgm(fs::path(stem).concat(".pgm"), map.width, map.height, map.values);
}

FarFieldMap read_map(const fs::path& stem) {
  const auto m = read_matrix_csv(fs::path(stem).concat(".csv"));
  json meta;
  try {
    meta = json::parse(read_text_file(fs::path(stem).concat(".json")));
  } catch (const json::exception& e) {
    throw FormatError(stem.string() + ".json: " + e.what());
  }
  FarFieldMap map;
  map.width = m.width;
  map.height = m.height;
  map.values = m.values;
  try {
    map.windows.signal = window_from(meta.at("signal_window_kev"));
    map.windows.idler = window_from(meta.at("idler_window_kev"));
    map.geometry_hash = meta.at("geometry_hash").get<std::string>();
    map.normalization =
        meta.at("normalization").get<std::string>() == "relative" ? Normalization::relative : Normalization::pairs_per_hour;
    map.raw_peak = meta.at("raw_peak").get<double>();
    map.pairs_per_hour_per_unit = meta.value("pairs_per_hour_per_unit", 0.0);
  } catch (const json::exception& e) {
    throw FormatError(stem.string() + ".json: " + e.what());
  }
  return map;
}

void write_events_csv(const fs::path& path, const EventList& events) {
  std::string text = "frame_id,x,y,cx,cy,energy_ev\n";
  text.reserve(events.size() * 40 + text.size());
  char buf[128];
  for (const auto& e : events) {
    const int len = std::snprintf(buf, sizeof buf, "%lld,%d,%d,%.3f,%.3f,%lld\n", static_cast<long long>(e.frame_id),
                                  e.x, e.y, e.cx, e.cy, static_cast<long long>(e.energy_ev()));
    text.append(buf, len);
  }
  write_text_file(path, text);
}

EventList read_events_csv(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty event list");
  strip_cr(line);
  if (line != "frame_id,x,y,cx,cy,energy_ev") throw FormatError(path.string() + ": unexpected event-list header");
  EventList out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto c = split_commas(line);
    if (c.size() != 6) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 6 fields");
    PhotonEvent e;
    e.frame_id = parse_number<std::int64_t>(c[0], path, line_no);
    e.x = parse_number<int>(c[1], path, line_no);
    e.y = parse_number<int>(c[2], path, line_no);
    e.cx = parse_number<double>(c[3], path, line_no);
    e.cy = parse_number<double>(c[4], path, line_no);
    e.energy_kev = static_cast<double>(parse_number<std::int64_t>(c[5], path, line_no)) / 1000.0;
    out.push_back(e);
  }
  return out;
}

void write_cti_csv(const fs::path& path, const std::vector<double>& cti) {
  std::string text = "column,cti\n";
  char buf[64];
  for (std::size_t i = 0; i < cti.size(); ++i) {
    text.append(buf, std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, cti[i]));
  }
  write_text_file(path, text);
}

std::vector<double> read_cti_csv(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  std::getline(in, line);
  strip_cr(line);
  if (line != "column,cti") throw FormatError(path.string() + ": unexpected CTI header");
  std::vector<double> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto c = split_commas(line);
    if (c.size() != 2) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 2 fields");
    const auto col = parse_number<std::size_t>(c[0], path, line_no);
    if (col != out.size()) throw FormatError(path.string() + ": columns must be listed in order");
    out.push_back(parse_number<double>(c[1], path, line_no));
  }
  return out;
}

void write_mask_csv(const fs::path& path, const std::vector<std::pair<int, int>>& defects) {
  std::string text = "x,y\n";
  char buf[48];
  for (const auto& [x, y] : defects) text.append(buf, std::snprintf(buf, sizeof buf, "%d,%d\n", x, y));
  write_text_file(path, text);
}

std::vector<std::pair<int, int>> read_mask_csv(const fs::path& path) {
  auto in = open_input(path);
  std::string line;
  std::getline(in, line);
  strip_cr(line);
  if (line != "x,y") throw FormatError(path.string() + ": unexpected mask header");
  std::vector<std::pair<int, int>> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    const auto c = split_commas(line);
    if (c.size() != 2) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 2 fields");
    out.emplace_back(parse_number<int>(c[0], path, line_no), parse_number<int>(c[1], path, line_no));
  }
  return out;
}

std::string read_text_file(const fs::path& path) {
  auto in = open_input(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot create " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

std::string file_hash(const fs::path& path) {
  auto in = open_input(path, std::ios::binary);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 20);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = in.gcount();
    if (got <= 0) break;
    h = fnv1a64(std::string_view(buf.data(), static_cast<std::size_t>(got)), h);
  }
  return hex64(h);
}

}  // namespace xspdc
