#include "tsdf/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "tsdf/error.hpp"

namespace tsdf {
namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

template <class T>
T parse_number(std::string_view key, const std::string& text) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config: key '" + std::string(key) + "' has malformed value '" + text + "'");
  }
  return value;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw InternalError("format_number: conversion failed");
  return std::string(buf, ptr);
}

ConfigMap ConfigMap::parse(std::string_view text, std::string_view origin) {
  ConfigMap out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
    out.set(std::move(key), trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

ConfigMap ConfigMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

const std::string* ConfigMap::find(std::string_view key) const {
  auto it = values_.find(std::string(key));
  return it == values_.end() ? nullptr : &it->second;
}

std::string ConfigMap::get_string(std::string_view key, std::string fallback) const {
  const auto* v = find(key);
  return v ? *v : std::move(fallback);
}

double ConfigMap::get_double(std::string_view key, double fallback) const {
  const auto* v = find(key);
  return v ? parse_number<double>(key, *v) : fallback;
}

std::int64_t ConfigMap::get_int(std::string_view key, std::int64_t fallback) const {
  const auto* v = find(key);
  return v ? parse_number<std::int64_t>(key, *v) : fallback;
}

std::uint64_t ConfigMap::get_u64(std::string_view key, std::uint64_t fallback) const {
  const auto* v = find(key);
  return v ? parse_number<std::uint64_t>(key, *v) : fallback;
}

std::size_t ConfigMap::get_size(std::string_view key, std::size_t fallback) const {
  return std::size_t(get_u64(key, fallback));
}

bool ConfigMap::get_bool(std::string_view key, bool fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("config: key '" + std::string(key) + "' expects a boolean, got '" + *v + "'");
}

std::vector<double> ConfigMap::get_doubles(std::string_view key, std::vector<double> fallback) const {
  const auto* v = find(key);
  if (!v) return fallback;
  std::vector<double> out;
  std::istringstream in(*v);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
  if (out.empty()) throw ConfigError("config: key '" + std::string(key) + "' has an empty list");
  return out;
}

void ConfigMap::merge(const ConfigMap& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string ConfigMap::to_string() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace tsdf
