#pragma once

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "gfpc/errors.hpp"

namespace gfpc {

/// Decoded PNG with 1 (gray) or 3 (RGB) interleaved channels.
struct PngImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::uint32_t bit_depth = 0;  // 8 or 16
  std::vector<std::uint16_t> samples;

  std::uint16_t at(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return samples[(r * width + c) * channels + ch];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] inline void png_error_handler(png_structp png, png_const_charp msg) {
  auto* what = static_cast<std::string*>(png_get_error_ptr(png));
  if (what) *what = msg;
  png_longjmp(png, 1);
}

inline void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace detail

/// Reads 8- or 16-bit gray/RGB PNGs. Palettes expand to RGB, alpha is dropped,
/// sub-byte gray expands to 8 bits.
inline PngImage read_png(const std::string& path) {
  detail::FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open " + path);
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw FormatError(path + " is not a PNG file");

  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_handler,
                                           detail::png_warning_handler);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  PngImage img;
  std::vector<png_bytep> rows;
  std::vector<unsigned char> raw;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("failed to decode " + path + ": " + err);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  auto depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) {
    png_set_palette_to_rgb(png);
    depth = 8;
  }
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    depth = 8;
  }
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian uint16 in memory
  png_read_update_info(png, info);

  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.bit_depth = depth;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (std::size_t r = 0; r < img.height; ++r) rows[r] = raw.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (img.channels != 1 && img.channels != 3)
    throw FormatError(path + ": unsupported channel count " + std::to_string(img.channels));
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(n);
  if (depth == 16) {
    for (std::size_t i = 0; i < n; ++i)
      img.samples[i] = static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8));
  } else {
    for (std::size_t i = 0; i < n; ++i) img.samples[i] = raw[i];
  }
  return img;
}

inline void write_png(const std::string& path, const PngImage& img) {
  if (img.channels != 1 && img.channels != 3) throw FormatError("PNG output needs 1 or 3 channels");
  if (img.bit_depth != 8 && img.bit_depth != 16) throw FormatError("PNG output needs bit depth 8 or 16");
  if (img.samples.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw DimensionError("PNG sample count does not match its dimensions");
  detail::FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open " + path + " for writing");

  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_handler,
                                            detail::png_warning_handler);
  if (!png) throw IoError("libpng initialisation failed");
  png_infop info = png_create_info_struct(png);
  const std::size_t per_row = static_cast<std::size_t>(img.width) * img.channels * (img.bit_depth / 8);
  std::vector<unsigned char> raw(per_row * img.height);
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    if (img.bit_depth == 16) {
      raw[2 * i] = static_cast<unsigned char>(img.samples[i] >> 8);  // PNG is big-endian
      raw[2 * i + 1] = static_cast<unsigned char>(img.samples[i] & 0xff);
    } else {
      raw[i] = static_cast<unsigned char>(img.samples[i]);
    }
  }
  std::vector<png_bytep> rows(img.height);
  for (std::size_t r = 0; r < img.height; ++r) rows[r] = raw.data() + r * per_row;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode " + path + ": " + err);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, img.width, img.height, static_cast<int>(img.bit_depth),
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IoError("failed writing " + path);
}

}  // namespace gfpc
