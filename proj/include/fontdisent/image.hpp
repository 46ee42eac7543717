#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fontdisent {

/// Row-major single-channel image with values in [0,1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f) : width(w), height(h), pixels(static_cast<size_t>(w) * h, fill) {}

  float& at(int x, int y) { return pixels[static_cast<size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<size_t>(y) * width + x]; }
  size_t size() const { return pixels.size(); }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // interleaved RGB

  RgbImage() = default;
  RgbImage(int w, int h, std::array<std::uint8_t, 3> fill = {255, 255, 255});

  void set(int x, int y, std::array<std::uint8_t, 3> rgb);
};

// 8-bit PNG codecs.  Gray values are quantized with round(v * 255).
void write_png(const std::filesystem::path& path, const GrayImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);
GrayImage read_png_gray(const std::filesystem::path& path);

/// The value a pixel takes after an 8-bit round trip.
inline float quantize8(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<float>(static_cast<int>(c * 255.0f + 0.5f)) / 255.0f;
}

}  // namespace fontdisent
