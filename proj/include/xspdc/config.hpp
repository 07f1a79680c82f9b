#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace xspdc {

/// Flat key=value configuration.
///
/// One `key = value` per line, `#` starts a comment, and a `[section]` line
/// prefixes every following key with `section.`. Readers pull typed values and
/// mark keys as consumed; `reject_unconsumed()` turns leftovers into a
/// ConfigError so misspelled keys never pass silently.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, std::string_view origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  /// Applies a `key=value` override; later calls win.
  void set(const std::string& key, const std::string& value);
  void apply_override(std::string_view assignment);

  bool contains(const std::string& key) const;
  std::optional<std::string> raw(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::int64_t> get_ints(const std::string& key, std::vector<std::int64_t> fallback) const;

  std::optional<double> find_double(const std::string& key) const;

  /// Throws ConfigError naming keys under `prefix` (all keys when empty) that
  /// no reader asked for.
  void reject_unconsumed(std::string_view prefix = {}) const;

  /// Canonical `key=value\n` rendering in key order; the run hash is taken over this.
  std::string canonical() const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
  std::string origin_;
  mutable std::set<std::string> consumed_;
};

/// Splits on commas and/or whitespace, dropping empty tokens.
std::vector<std::string> split_list(std::string_view text);

/// 64-bit FNV-1a, used for content and config hashes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

}  // namespace xspdc
