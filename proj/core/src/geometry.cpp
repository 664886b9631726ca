#include "mmr/geometry.hpp"

#include <algorithm>

namespace mmr {

std::optional<Box> Mask::bbox() const {
  int x0 = w_, y0 = h_, x1 = -1, y1 = -1;
  for (int y = 0; y < h_; ++y) {
    for (int x = 0; x < w_; ++x) {
      if (!test(y, x)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) return std::nullopt;
  return Box{x0, y0, x1, y1};
}

int64_t Mask::intersection_count(const Mask& a, const Mask& b) {
  if (!a.same_dims(b)) throw DataError("mask dimension mismatch");
  int64_t n = 0;
  for (size_t i = 0; i < a.bits_.size(); ++i) {
    n += __builtin_popcountll(a.bits_[i] & b.bits_[i]);
  }
  return n;
}

int64_t Mask::union_count(const Mask& a, const Mask& b) {
  if (!a.same_dims(b)) throw DataError("mask dimension mismatch");
  int64_t n = 0;
  for (size_t i = 0; i < a.bits_.size(); ++i) {
    n += __builtin_popcountll(a.bits_[i] | b.bits_[i]);
  }
  return n;
}

std::vector<std::array<int64_t, 2>> rle_encode(const Mask& mask) {
  std::vector<std::array<int64_t, 2>> runs;
  const int64_t n = static_cast<int64_t>(mask.height()) * mask.width();
  const int w = mask.width();
  int64_t run_start = -1;
  for (int64_t i = 0; i < n; ++i) {
    const bool on = mask.test(static_cast<int>(i / w), static_cast<int>(i % w));
    if (on && run_start < 0) run_start = i;
    if (!on && run_start >= 0) {
      runs.push_back({run_start, i - run_start});
      run_start = -1;
    }
  }
  if (run_start >= 0) runs.push_back({run_start, n - run_start});
  return runs;
}

Mask rle_decode(const std::vector<std::array<int64_t, 2>>& runs, int h, int w) {
  Mask mask(h, w);
  const int64_t n = static_cast<int64_t>(h) * w;
  int64_t prev_end = -1;
  for (const auto& [start, len] : runs) {
    if (len <= 0 || start < 0 || start + len > n || start <= prev_end) {
      throw DataError("invalid RLE run");
    }
    prev_end = start + len - 1;
    for (int64_t i = start; i < start + len; ++i) {
      mask.set(static_cast<int>(i / w), static_cast<int>(i % w));
    }
  }
  return mask;
}

}  // namespace mmr
