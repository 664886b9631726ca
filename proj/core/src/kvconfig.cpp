#include "mmr/kvconfig.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "mmr/errors.hpp"

namespace mmr {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KvConfig KvConfig::parse_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str());
}

KvConfig KvConfig::parse_string(const std::string& text) {
  KvConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("config line " + std::to_string(lineno) +
                      ": expected `key = value`");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw DataError("config line " + std::to_string(lineno) + ": empty key");
    }
    cfg.kv_[key] = value;
  }
  return cfg;
}

std::string KvConfig::get_string(const std::string& key,
                                 const std::string& fallback) const {
  consumed_.insert(key);
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

std::string KvConfig::require_string(const std::string& key) const {
  consumed_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) throw DataError("missing config key: " + key);
  return it->second;
}

int KvConfig::get_int(const std::string& key, int fallback) const {
  consumed_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("config key `" + key + "`: not an integer: " + it->second);
  }
}

uint64_t KvConfig::get_u64(const std::string& key, uint64_t fallback) const {
  consumed_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    size_t pos = 0;
    const uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("config key `" + key + "`: not an unsigned integer: " +
                    it->second);
  }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
  consumed_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw DataError("config key `" + key + "`: not a number: " + it->second);
  }
}

std::vector<double> KvConfig::get_doubles(
    const std::string& key, const std::vector<double>& fallback) const {
  consumed_.insert(key);
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  std::vector<double> out;
  std::istringstream ss(it->second);
  std::string tok;
  while (ss >> tok) {
    try {
      size_t pos = 0;
      out.push_back(std::stod(tok, &pos));
      if (pos != tok.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("config key `" + key + "`: not a number list: " +
                      it->second);
    }
  }
  return out;
}

void KvConfig::ensure_all_consumed() const {
  std::string unknown;
  for (const auto& [k, v] : kv_) {
    if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  }
  if (!unknown.empty()) throw DataError("unknown config keys: " + unknown);
}

std::string KvConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : kv_) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

uint64_t fnv1a64(const void* data, size_t n) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xCBF29CE484222325ull;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string to_hex(uint64_t x) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[x & 0xF];
    x >>= 4;
  }
  return s;
}

}  // namespace mmr
