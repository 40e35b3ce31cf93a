#pragma once

// Minimal libpng reader for checking written charts.

#include <png.h>

#include <cstdio>
#include <string>
#include <vector>

struct PngImage {
  int width = 0, height = 0, color_type = -1, bit_depth = 0;
  std::vector<std::vector<unsigned char>> rows;
};

inline bool has_png_signature(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) return false;
  unsigned char sig[8] = {};
  const bool ok = std::fread(sig, 1, 8, fp) == 8 && png_sig_cmp(sig, 0, 8) == 0;
  std::fclose(fp);
  return ok;
}

inline PngImage read_png(const std::string& path) {
  PngImage img;
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) return img;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return PngImage{};
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.color_type = png_get_color_type(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  img.rows.assign(static_cast<std::size_t>(img.height), std::vector<unsigned char>(png_get_rowbytes(png, info)));
  for (auto& r : img.rows) png_read_row(png, r.data(), nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}
