#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace unit {

/// Row-major HWC RGB image with values in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

/// Bilinear resampling with half-pixel centers.
inline Image resize_bilinear(const Image& src, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || src.height == 0 || src.width == 0)
    throw std::invalid_argument("resize_bilinear: empty extent");
  if (out_h == src.height && out_w == src.width) return src;
  Image dst(out_h, out_w);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bottom = (1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        dst.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return dst;
}

/// Resizes so the shorter side equals `side`, preserving aspect ratio.
inline Image resize_shortest_side(const Image& src, std::size_t side) {
  const std::size_t shortest = std::min(src.height, src.width);
  const auto scaled = [&](std::size_t extent) {
    return static_cast<std::size_t>(std::lround(static_cast<double>(extent) * side / static_cast<double>(shortest)));
  };
  return resize_bilinear(src, scaled(src.height), scaled(src.width));
}

inline Image crop(const Image& src, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > src.height || x0 + w > src.width) throw std::invalid_argument("crop: window outside image");
  Image dst(h, w);
  for (std::size_t y = 0; y < h; ++y)
    std::copy_n(src.pixels.begin() + ((y0 + y) * src.width + x0) * 3, w * 3, dst.pixels.begin() + y * w * 3);
  return dst;
}

}  // namespace unit
