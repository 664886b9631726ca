#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace mmr {

// Minimal `key = value` config format: one pair per line, '#' comments,
// blank lines ignored. Readers track consumed keys so unknown keys can be
// reported as errors.
class KvConfig {
 public:
  static KvConfig parse_file(const std::filesystem::path& path);
  static KvConfig parse_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  int get_int(const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  // Whitespace-separated list of doubles.
  std::vector<double> get_doubles(const std::string& key,
                                  const std::vector<double>& fallback) const;

  void set(const std::string& key, const std::string& value) {
    kv_[key] = value;
  }

  // Throws DataError naming any key never read through a getter.
  void ensure_all_consumed() const;

  // Canonical text form: sorted keys, "key = value" lines.
  std::string serialize() const;

 private:
  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> consumed_;
};

uint64_t fnv1a64(const void* data, size_t n);
uint64_t fnv1a64(const std::string& s);
std::string to_hex(uint64_t x);

}  // namespace mmr
