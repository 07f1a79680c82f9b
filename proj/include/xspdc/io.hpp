#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "xspdc/events.hpp"
#include "xspdc/simulator.hpp"

namespace xspdc {

/// Raw frame container: little-endian "PNCF", u32 version, u32 width,
/// u32 height, u64 frame count, f64 ADU per keV.
///
/// Version 1 follows with dense u16 frames. Version 2 is zero-suppressed: a
/// u32 storage threshold, then per frame a u32 pixel count and that many
/// (u32 pixel index, u16 value) entries for pixels at or above the threshold;
/// every other pixel reads back as 0.
struct RawFrameHeader {
  std::uint32_t version = 1;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint64_t frame_count = 0;
  double adu_per_kev = 0.0;
  std::uint32_t suppress_adu = 0;  ///< version 2 only

  static constexpr std::size_t kBytes = 4 + 4 + 4 + 4 + 8 + 8;
  std::size_t frame_pixels() const { return static_cast<std::size_t>(width) * height; }
  bool sparse() const { return version == 2; }
};

class RawFrameWriter {
 public:
  /// Dense frames when `suppress_adu` is 0, zero-suppressed otherwise.
  RawFrameWriter(const std::filesystem::path& path, std::uint32_t width, std::uint32_t height, double adu_per_kev,
                 std::uint32_t suppress_adu = 0);
  ~RawFrameWriter();
  RawFrameWriter(const RawFrameWriter&) = delete;
  RawFrameWriter& operator=(const RawFrameWriter&) = delete;

  void write(const std::uint16_t* frame);
  /// Patches the frame count into the header and closes the file.
  void close();

 private:
  std::ofstream out_;
  RawFrameHeader header_;
  bool closed_ = false;
  std::vector<char> buffer_;
};

class RawFrameReader {
 public:
  /// Throws FormatError on bad magic, version, or a payload that does not
  /// match the header's frame count.
  explicit RawFrameReader(const std::filesystem::path& path);

  const RawFrameHeader& header() const { return header_; }
  /// Reads the next frame; false at the end of the set.
  bool next(std::vector<std::uint16_t>& frame);

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  RawFrameHeader header_;
  std::uint64_t read_ = 0;
  std::vector<char> buffer_;
};

/// Row-major matrix in CSV ("%.9g", comma separated, LF).
struct Matrix {
  int width = 0;
  int height = 0;
  std::vector<double> values;
};

void write_matrix_csv(const std::filesystem::path& path, int width, int height, const std::vector<double>& values);
Matrix read_matrix_csv(const std::filesystem::path& path);

/// Map as `<stem>.csv` + `<stem>.json` + `<stem>.pgm`.
void write_map(const std::filesystem::path& stem, const FarFieldMap& map);
FarFieldMap read_map(const std::filesystem::path& stem);

/// 8-bit binary PGM scaled to the maximum value.
void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<double>& values);

/// Event list: `frame_id,x,y,cx,cy,energy_ev`.
void write_events_csv(const std::filesystem::path& path, const EventList& events);
EventList read_events_csv(const std::filesystem::path& path);

/// Calibration sidecars: `column,cti` and `x,y` defect lists.
void write_cti_csv(const std::filesystem::path& path, const std::vector<double>& cti);
std::vector<double> read_cti_csv(const std::filesystem::path& path);
void write_mask_csv(const std::filesystem::path& path, const std::vector<std::pair<int, int>>& defects);
std::vector<std::pair<int, int>> read_mask_csv(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

/// FNV-1a over the file contents, hex encoded.
std::string file_hash(const std::filesystem::path& path);

/// Shortest decimal that parses back to the same double ("%.17g" fallback).
std::string format_double(double v);

}  // namespace xspdc
