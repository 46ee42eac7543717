#include "fontdisent/image.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "fontdisent/error.hpp"

namespace fontdisent {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return f;
}

void write_rows(const std::filesystem::path& path, int width, int height, int color_type,
                const std::vector<png_bytep>& rows) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorKind::Io, "png write failed: " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

RgbImage::RgbImage(int w, int h, std::array<std::uint8_t, 3> fill)
    : width(w), height(h), data(static_cast<size_t>(w) * h * 3) {
  for (size_t i = 0; i < data.size(); i += 3) {
    data[i] = fill[0];
    data[i + 1] = fill[1];
    data[i + 2] = fill[2];
  }
}

void RgbImage::set(int x, int y, std::array<std::uint8_t, 3> rgb) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const size_t o = (static_cast<size_t>(y) * width + x) * 3;
  data[o] = rgb[0];
  data[o + 1] = rgb[1];
  data[o + 2] = rgb[2];
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  std::vector<std::uint8_t> bytes(image.pixels.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(quantize8(image.pixels[i]) * 255.0f + 0.5f);
  }
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) rows[y] = bytes.data() + static_cast<size_t>(y) * image.width;
  write_rows(path, image.width, image.height, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<png_bytep> rows(image.height);
  auto* base = const_cast<std::uint8_t*>(image.data.data());
  for (int y = 0; y < image.height; ++y) rows[y] = base + static_cast<size_t>(y) * image.width * 3;
  write_rows(path, image.width, image.height, PNG_COLOR_TYPE_RGB, rows);
}

GrayImage read_png_gray(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::Io, "libpng init failed");
  }
  std::vector<std::uint8_t> bytes;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorKind::CorruptFile, "unreadable png: " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  png_read_update_info(png, info);
  const size_t stride = png_get_rowbytes(png, info);
  bytes.resize(stride * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  GrayImage out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out.at(x, y) = static_cast<float>(bytes[y * stride + x]) / 255.0f;
  }
  return out;
}

}  // namespace fontdisent
