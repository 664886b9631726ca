#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "mmr/errors.hpp"

namespace mmr {

// Axis-aligned box over the integer pixel grid, bounds inclusive: pixel
// (x, y) belongs to the box iff x0 <= x <= x1 and y0 <= y <= y1.
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int64_t pixel_count() const {
    return static_cast<int64_t>(x1 - x0 + 1) * (y1 - y0 + 1);
  }

  bool contains(int x, int y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }

  bool valid_within(int h, int w) const {
    return x0 >= 0 && y0 >= 0 && x0 <= x1 && y0 <= y1 && x1 < w && y1 < h;
  }

  static std::optional<Box> intersect(const Box& a, const Box& b) {
    const int x0 = std::max(a.x0, b.x0), y0 = std::max(a.y0, b.y0);
    const int x1 = std::min(a.x1, b.x1), y1 = std::min(a.y1, b.y1);
    if (x0 > x1 || y0 > y1) return std::nullopt;
    return Box{x0, y0, x1, y1};
  }

  bool operator==(const Box&) const = default;
};

// Binary H x W mask backed by a packed bitset (bit index = y*w + x).
class Mask {
 public:
  Mask() = default;
  Mask(int h, int w)
      : h_(h), w_(w), bits_((static_cast<size_t>(h) * w + 63) / 64, 0) {}

  int height() const { return h_; }
  int width() const { return w_; }

  void set(int y, int x, bool on = true) {
    const size_t i = static_cast<size_t>(y) * w_ + x;
    if (on)
      bits_[i >> 6] |= (1ull << (i & 63));
    else
      bits_[i >> 6] &= ~(1ull << (i & 63));
  }

  bool test(int y, int x) const {
    const size_t i = static_cast<size_t>(y) * w_ + x;
    return (bits_[i >> 6] >> (i & 63)) & 1ull;
  }

  int64_t count() const {
    int64_t n = 0;
    for (uint64_t word : bits_) n += __builtin_popcountll(word);
    return n;
  }

  bool empty() const {
    for (uint64_t word : bits_)
      if (word) return false;
    return true;
  }

  // Tight bounding box of the set pixels; nullopt when empty.
  std::optional<Box> bbox() const;

  static int64_t intersection_count(const Mask& a, const Mask& b);
  static int64_t union_count(const Mask& a, const Mask& b);

  bool same_dims(const Mask& o) const { return h_ == o.h_ && w_ == o.w_; }
  bool operator==(const Mask&) const = default;

 private:
  int h_ = 0, w_ = 0;
  std::vector<uint64_t> bits_;
};

// Run-length encoding over row-major pixel order: maximal runs of set
// pixels as [start, length] pairs with 0-based flat starts, ascending.
std::vector<std::array<int64_t, 2>> rle_encode(const Mask& mask);
Mask rle_decode(const std::vector<std::array<int64_t, 2>>& runs, int h, int w);

}  // namespace mmr
