#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fontdisent/image.hpp"

namespace fontdisent::metrics {

struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h) : width(w), height(h), bits(static_cast<size_t>(w) * h, 0) {}

  std::uint8_t at(int x, int y) const { return bits[static_cast<size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return bits[static_cast<size_t>(y) * width + x]; }
  size_t count() const;
  bool empty() const { return count() == 0; }
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline constexpr int kHistogramBins = 256;

/// Histogram bin of a [0,1] pixel.
inline int histogram_bin(float v) {
  const float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return static_cast<int>(c * 255.0f + 0.5f);
}

struct OtsuResult {
  /// Bins <= threshold are background.  -1 when the image holds a single level.
  int threshold_bin = -1;
  double between_class_variance = 0.0;
};

OtsuResult otsu_threshold(std::span<const float> pixels);
/// Foreground where the pixel's bin exceeds the Otsu threshold; all zero for
/// constant images.
Mask otsu_binarize(const GrayImage& image);

struct CannyParams {
  double sigma = 1.0;
  double low_ratio = 0.1;
  double high_ratio = 0.2;
};

/// Edge pixels of a mask: Gaussian smoothing, Sobel gradients, non-maximum
/// suppression and hysteresis with thresholds relative to the peak gradient.
std::vector<Point> canny_edges(const Mask& mask, const CannyParams& params = {});
std::vector<Point> canny_edges(const GrayImage& image, const CannyParams& params = {});

/// Symmetric Hausdorff distance.  Throws EmptyPointSet if either set is empty.
double hausdorff(std::span<const Point> a, std::span<const Point> b);
/// Mean of the two directed average nearest-neighbour distances.
double chamfer(std::span<const Point> a, std::span<const Point> b);
/// |a and b| / |a or b|, 1 when both are empty.
double iou(const Mask& a, const Mask& b);

double mse(const GrayImage& a, const GrayImage& b);
double mae(const GrayImage& a, const GrayImage& b);

}  // namespace fontdisent::metrics
