#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tsdf {

// Flat "key = value" store with dotted section prefixes (diffusion.lr = 1e-4).
// '#' starts a comment. Serialization is sorted by key, so equal maps print
// identical bytes.
class ConfigMap {
 public:
  static ConfigMap parse(std::string_view text, std::string_view origin = "<config>");
  static ConfigMap load(const std::filesystem::path& path);

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  void erase(std::string_view key) { values_.erase(std::string(key)); }
  bool contains(std::string_view key) const { return values_.count(std::string(key)) > 0; }
  const std::string* find(std::string_view key) const;

  // Typed getters; a present but malformed value raises ConfigError.
  std::string get_string(std::string_view key, std::string fallback) const;
  double get_double(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;
  std::size_t get_size(std::string_view key, std::size_t fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;
  std::vector<double> get_doubles(std::string_view key, std::vector<double> fallback) const;

  // Overlays `other` on top of this map.
  void merge(const ConfigMap& other);

  std::string to_string() const;
  const std::map<std::string, std::string>& entries() const noexcept { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Shortest text that parses back to exactly `v`.
std::string format_number(double v);

}  // namespace tsdf
