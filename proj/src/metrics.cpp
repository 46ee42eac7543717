#include "fontdisent/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "fontdisent/error.hpp"

namespace fontdisent::metrics {

size_t Mask::count() const {
  return static_cast<size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

OtsuResult otsu_threshold(std::span<const float> pixels) {
  std::array<double, kHistogramBins> hist{};
  for (float v : pixels) hist[histogram_bin(v)] += 1.0;
  const double total = static_cast<double>(pixels.size());
  if (total == 0.0) return {};

  double total_sum = 0.0;
  for (int k = 0; k < kHistogramBins; ++k) total_sum += k * hist[k];

  OtsuResult best;
  double w0 = 0.0;
  double sum0 = 0.0;
  for (int k = 0; k < kHistogramBins - 1; ++k) {
    w0 += hist[k];
    sum0 += k * hist[k];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double mu0 = sum0 / w0 / 255.0;
    const double mu1 = (total_sum - sum0) / w1 / 255.0;
    const double variance = (w0 / total) * (w1 / total) * (mu0 - mu1) * (mu0 - mu1);
    if (best.threshold_bin < 0 || variance > best.between_class_variance) {
      best.threshold_bin = k;
      best.between_class_variance = variance;
    }
  }
  return best;
}

Mask otsu_binarize(const GrayImage& image) {
  Mask mask(image.width, image.height);
  const OtsuResult otsu = otsu_threshold(image.pixels);
  if (otsu.threshold_bin < 0) return mask;
  for (size_t k = 0; k < image.pixels.size(); ++k) {
    mask.bits[k] = histogram_bin(image.pixels[k]) > otsu.threshold_bin ? 1 : 0;
  }
  return mask;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace

std::vector<Point> canny_edges(const Mask& mask, const CannyParams& params) {
  const int w = mask.width;
  const int h = mask.height;
  std::vector<Point> edges;
  if (w < 3 || h < 3 || mask.empty()) return edges;

  auto clampx = [w](int x) { return std::clamp(x, 0, w - 1); };
  auto clampy = [h](int y) { return std::clamp(y, 0, h - 1); };
  auto idx = [w](int x, int y) { return static_cast<size_t>(y) * w + x; };

  // Separable Gaussian with replicated borders.
  const auto kernel = gaussian_kernel(params.sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> tmp(static_cast<size_t>(w) * h), smooth(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int r = -radius; r <= radius; ++r) acc += kernel[r + radius] * mask.at(clampx(x + r), y);
      tmp[idx(x, y)] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int r = -radius; r <= radius; ++r) acc += kernel[r + radius] * tmp[idx(x, clampy(y + r))];
      smooth[idx(x, y)] = acc;
    }
  }

  std::vector<double> gx(smooth.size()), gy(smooth.size()), mag(smooth.size());
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      auto s = [&](int dx, int dy) { return smooth[idx(clampx(x + dx), clampy(y + dy))]; };
      const double sx = (s(1, -1) + 2 * s(1, 0) + s(1, 1)) - (s(-1, -1) + 2 * s(-1, 0) + s(-1, 1));
      const double sy = (s(-1, 1) + 2 * s(0, 1) + s(1, 1)) - (s(-1, -1) + 2 * s(0, -1) + s(1, -1));
      gx[idx(x, y)] = sx;
      gy[idx(x, y)] = sy;
      mag[idx(x, y)] = std::hypot(sx, sy);
      peak = std::max(peak, mag[idx(x, y)]);
    }
  }
  if (peak <= 0.0) return edges;

  // Non-maximum suppression along the quantized gradient direction.
  std::vector<double> thin(mag.size(), 0.0);
  for (int y = 1; y < h - 1; ++y) {
    for (int x = 1; x < w - 1; ++x) {
      const double m = mag[idx(x, y)];
      if (m <= 0.0) continue;
      double angle = std::atan2(gy[idx(x, y)], gx[idx(x, y)]) * 180.0 / M_PI;
      if (angle < 0) angle += 180.0;
      int dx = 0, dy = 0;
      if (angle < 22.5 || angle >= 157.5) {
        dx = 1;
      } else if (angle < 67.5) {
        dx = 1;
        dy = 1;
      } else if (angle < 112.5) {
        dy = 1;
      } else {
        dx = -1;
        dy = 1;
      }
      if (m >= mag[idx(x + dx, y + dy)] && m > mag[idx(x - dx, y - dy)]) thin[idx(x, y)] = m;
    }
  }

  // Hysteresis: strong pixels seed a flood fill over weak 8-neighbours.
  const double high = params.high_ratio * peak;
  const double low = params.low_ratio * peak;
  std::vector<std::uint8_t> state(thin.size(), 0);  // 0 none, 1 weak, 2 edge
  std::vector<size_t> stack;
  for (size_t k = 0; k < thin.size(); ++k) {
    if (thin[k] >= high) {
      state[k] = 2;
      stack.push_back(k);
    } else if (thin[k] >= low) {
      state[k] = 1;
    }
  }
  while (!stack.empty()) {
    const size_t k = stack.back();
    stack.pop_back();
    const int x = static_cast<int>(k % w);
    const int y = static_cast<int>(k / w);
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const size_t n = idx(nx, ny);
        if (state[n] == 1) {
          state[n] = 2;
          stack.push_back(n);
        }
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (state[idx(x, y)] == 2) edges.push_back({static_cast<double>(x), static_cast<double>(y)});
    }
  }
  return edges;
}

std::vector<Point> canny_edges(const GrayImage& image, const CannyParams& params) {
  return canny_edges(otsu_binarize(image), params);
}

namespace {

/// Exact nearest-neighbour queries against a point set sorted by x: the scan
/// stops once the horizontal gap alone exceeds the best distance found.
class NearestNeighbour {
 public:
  explicit NearestNeighbour(std::span<const Point> points) : sorted_(points.begin(), points.end()) {
    std::sort(sorted_.begin(), sorted_.end(), [](const Point& a, const Point& b) { return a.x < b.x; });
  }

  double squared_distance(const Point& q) const {
    const auto start = std::lower_bound(sorted_.begin(), sorted_.end(), q.x,
                                        [](const Point& p, double x) { return p.x < x; });
    double best = std::numeric_limits<double>::infinity();
    for (auto it = start; it != sorted_.end(); ++it) {
      const double dx = it->x - q.x;
      if (dx * dx >= best) break;
      best = std::min(best, dx * dx + (it->y - q.y) * (it->y - q.y));
    }
    for (auto it = start; it != sorted_.begin();) {
      --it;
      const double dx = q.x - it->x;
      if (dx * dx >= best) break;
      best = std::min(best, dx * dx + (it->y - q.y) * (it->y - q.y));
    }
    return best;
  }

 private:
  std::vector<Point> sorted_;
};

void require_points(std::span<const Point> a, std::span<const Point> b) {
  if (a.empty() || b.empty()) throw Error(ErrorKind::EmptyPointSet, "distance between point sets needs both non-empty");
}

double directed_max(std::span<const Point> from, const NearestNeighbour& to) {
  double worst = 0.0;
  for (const Point& p : from) worst = std::max(worst, to.squared_distance(p));
  return std::sqrt(worst);
}

double directed_mean(std::span<const Point> from, const NearestNeighbour& to) {
  double sum = 0.0;
  for (const Point& p : from) sum += std::sqrt(to.squared_distance(p));
  return sum / static_cast<double>(from.size());
}

}  // namespace

double hausdorff(std::span<const Point> a, std::span<const Point> b) {
  require_points(a, b);
  const NearestNeighbour na(a), nb(b);
  return std::max(directed_max(a, nb), directed_max(b, na));
}

double chamfer(std::span<const Point> a, std::span<const Point> b) {
  require_points(a, b);
  const NearestNeighbour na(a), nb(b);
  return 0.5 * (directed_mean(a, nb) + directed_mean(b, na));
}

double iou(const Mask& a, const Mask& b) {
  if (a.width != b.width || a.height != b.height) throw Error(ErrorKind::ShapeMismatch, "iou of differently sized masks");
  size_t inter = 0, uni = 0;
  for (size_t k = 0; k < a.bits.size(); ++k) {
    inter += (a.bits[k] && b.bits[k]) ? 1 : 0;
    uni += (a.bits[k] || b.bits[k]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {

void require_same(const GrayImage& a, const GrayImage& b) {
  if (a.width != b.width || a.height != b.height) throw Error(ErrorKind::ShapeMismatch, "images differ in size");
}

}  // namespace

double mse(const GrayImage& a, const GrayImage& b) {
  require_same(a, b);
  double sum = 0.0;
  for (size_t k = 0; k < a.pixels.size(); ++k) {
    const double d = static_cast<double>(a.pixels[k]) - b.pixels[k];
    sum += d * d;
  }
  return sum / static_cast<double>(a.pixels.size());
}

double mae(const GrayImage& a, const GrayImage& b) {
  require_same(a, b);
  double sum = 0.0;
  for (size_t k = 0; k < a.pixels.size(); ++k) sum += std::abs(static_cast<double>(a.pixels[k]) - b.pixels[k]);
  return sum / static_cast<double>(a.pixels.size());
}

}  // namespace fontdisent::metrics
