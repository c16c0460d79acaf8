#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace avf {

// Flat key-value configuration addressed by dotted keys ("train.steps").
// Text form is INI-like:
//
//   # comment
//   [train]
//   steps = 1500
//
// Keys before the first section header are rejected.
class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  // "section.key=value"; later calls override earlier ones.
  void apply_override(std::string_view assignment);

  bool has(const std::string& key) const { return values_.contains(key); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Sections and keys in sorted order; parse(to_text()) reproduces the config.
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace avf
