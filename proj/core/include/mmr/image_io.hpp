#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmr/tensor.hpp"

namespace mmr {

// 8-bit RGB image, interleaved row-major (r,g,b per pixel).
struct ImageU8 {
  int h = 0;
  int w = 0;
  std::vector<uint8_t> v;  // size h*w*3

  ImageU8() = default;
  ImageU8(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_ * 3, 0) {}

  uint8_t& at(int y, int x, int ch) {
    return v[(static_cast<size_t>(y) * w + x) * 3 + ch];
  }
  uint8_t at(int y, int x, int ch) const {
    return v[(static_cast<size_t>(y) * w + x) * 3 + ch];
  }
};

// 16-bit grayscale image, row-major.
struct ImageU16 {
  int h = 0;
  int w = 0;
  std::vector<uint16_t> v;  // size h*w

  ImageU16() = default;
  ImageU16(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0) {}

  uint16_t& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
  uint16_t at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

void write_png_rgb8(const std::filesystem::path& path, const ImageU8& img);
ImageU8 read_png_rgb8(const std::filesystem::path& path);

void write_png_gray16(const std::filesystem::path& path, const ImageU16& img);
ImageU16 read_png_gray16(const std::filesystem::path& path);

// Raw float32 grid with a small header; used where bit-exact round-trips
// matter (e.g. raw depth with NaN sentinels, exported gate weights).
void write_float_grid(const std::filesystem::path& path, const Grid<float>& g);
Grid<float> read_float_grid(const std::filesystem::path& path);

// FNV-1a 64 over a file's raw bytes.
uint64_t fnv1a64_file(const std::filesystem::path& path);

}  // namespace mmr
