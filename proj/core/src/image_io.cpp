#include "mmr/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "mmr/errors.hpp"
#include "mmr/kvconfig.hpp"

namespace mmr {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw DataError("cannot open file: " + path.string());
  return f;
}

constexpr char kFloatGridMagic[4] = {'M', 'M', 'R', 'F'};

}  // namespace

void write_png_rgb8(const std::filesystem::path& path, const ImageU8& img) {
  if (img.h <= 0 || img.w <= 0 ||
      img.v.size() != static_cast<size_t>(img.h) * img.w * 3) {
    throw DataError("write_png_rgb8: malformed image buffer");
  }
  FilePtr f = open_file(path, "wb");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng error while writing: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y) {
    rows[y] = const_cast<png_bytep>(&img.v[static_cast<size_t>(y) * img.w * 3]);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 read_png_rgb8(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng error while reading: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth != 8 || color_type != PNG_COLOR_TYPE_RGB) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("expected 8-bit RGB PNG: " + path.string());
  }
  ImageU8 img(static_cast<int>(h), static_cast<int>(w));
  std::vector<png_bytep> rows(img.h);
  for (int y = 0; y < img.h; ++y) {
    rows[y] = &img.v[static_cast<size_t>(y) * img.w * 3];
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png_gray16(const std::filesystem::path& path, const ImageU16& img) {
  if (img.h <= 0 || img.w <= 0 ||
      img.v.size() != static_cast<size_t>(img.h) * img.w) {
    throw DataError("write_png_gray16: malformed image buffer");
  }
  FilePtr f = open_file(path, "wb");
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng error while writing: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.w),
               static_cast<png_uint_32>(img.h), 16, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  // PNG 16-bit samples are big-endian on the wire.
  std::vector<uint8_t> row_be(static_cast<size_t>(img.w) * 2);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const uint16_t v = img.at(y, x);
      row_be[2 * x] = static_cast<uint8_t>(v >> 8);
      row_be[2 * x + 1] = static_cast<uint8_t>(v & 0xFF);
    }
    png_write_row(png, row_be.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU16 read_png_gray16(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng error while reading: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth != 16 || color_type != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("expected 16-bit grayscale PNG: " + path.string());
  }
  ImageU16 img(static_cast<int>(h), static_cast<int>(w));
  std::vector<uint8_t> row_be(static_cast<size_t>(img.w) * 2);
  for (int y = 0; y < img.h; ++y) {
    png_read_row(png, row_be.data(), nullptr);
    for (int x = 0; x < img.w; ++x) {
      img.at(y, x) = static_cast<uint16_t>((row_be[2 * x] << 8) |
                                           row_be[2 * x + 1]);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_float_grid(const std::filesystem::path& path, const Grid<float>& g) {
  if (g.h <= 0 || g.w <= 0 ||
      g.v.size() != static_cast<size_t>(g.h) * g.w) {
    throw DataError("write_float_grid: malformed grid");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file: " + path.string());
  out.write(kFloatGridMagic, 4);
  const uint32_t h = static_cast<uint32_t>(g.h);
  const uint32_t w = static_cast<uint32_t>(g.w);
  out.write(reinterpret_cast<const char*>(&h), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(g.v.data()),
            static_cast<std::streamsize>(g.v.size() * sizeof(float)));
  if (!out) throw DataError("write failed: " + path.string());
}

Grid<float> read_float_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFloatGridMagic, 4) != 0) {
    throw DataError("bad float grid header: " + path.string());
  }
  uint32_t h = 0, w = 0;
  in.read(reinterpret_cast<char*>(&h), 4);
  in.read(reinterpret_cast<char*>(&w), 4);
  if (!in || h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20)) {
    throw DataError("bad float grid dimensions: " + path.string());
  }
  Grid<float> g(static_cast<int>(h), static_cast<int>(w));
  in.read(reinterpret_cast<char*>(g.v.data()),
          static_cast<std::streamsize>(g.v.size() * sizeof(float)));
  if (!in) throw DataError("truncated float grid: " + path.string());
  return g;
}

uint64_t fnv1a64_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  uint64_t h = 0xCBF29CE484222325ull;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize n = in.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001B3ull;
    }
  }
  return h;
}

}  // namespace mmr
