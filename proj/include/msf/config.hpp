#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace msf {

/// Flat key = value configuration. Lines starting with '#' are comments.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const;

  /// Keys not listed in `known` raise ConfigError.
  void require_known(std::initializer_list<const char*> known) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Shortest decimal form that round-trips a double exactly.
std::string format_double(double v);

}  // namespace msf
