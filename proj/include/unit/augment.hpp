#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "unit/datasets.hpp"
#include "unit/detection_loss.hpp"
#include "unit/image.hpp"
#include "unit/rng.hpp"

namespace unit {

struct AugmentConfig {
  std::size_t min_side = 48;  // shortest side after the random resize
  std::size_t max_side = 80;
  std::size_t min_crop = 38;
  std::size_t max_crop = 60;
  std::size_t output = data::image_size;  // the crop is resized back to this square
  double min_visible = 1.0;               // pixels; narrower clipped boxes are dropped

  void validate() const {
    if (min_side == 0 || min_side > max_side) throw std::invalid_argument("augment: invalid resize bounds");
    if (min_crop == 0 || min_crop > max_crop) throw std::invalid_argument("augment: invalid crop bounds");
    if (output == 0) throw std::invalid_argument("augment: output size must be positive");
  }
};

struct AugmentRecord {
  std::size_t side = 0;  // shortest side after resize
  std::size_t crop_y = 0, crop_x = 0, crop_h = 0, crop_w = 0;
};

/// Crops `target` to the pixel window of an image of extent (h, w) and
/// renormalizes to the window. Boxes with less than `min_visible` pixels left
/// in either direction are dropped together with their labels.
inline DetectionTarget crop_target(const DetectionTarget& target, std::size_t h, std::size_t w, std::size_t y0,
                                   std::size_t x0, std::size_t ch, std::size_t cw, double min_visible) {
  DetectionTarget out;
  const double fw = static_cast<double>(w), fh = static_cast<double>(h);
  for (std::size_t i = 0; i < target.size(); ++i) {
    const Box& b = target.boxes[i];
    const double x1 = std::max(b.x1() * fw, static_cast<double>(x0));
    const double x2 = std::min(b.x2() * fw, static_cast<double>(x0 + cw));
    const double y1 = std::max(b.y1() * fh, static_cast<double>(y0));
    const double y2 = std::min(b.y2() * fh, static_cast<double>(y0 + ch));
    if (x2 - x1 < min_visible || y2 - y1 < min_visible) continue;
    out.classes.push_back(target.classes[i]);
    out.boxes.push_back(Box::from_xyxy((x1 - x0) / cw, (y1 - y0) / ch, (x2 - x0) / cw, (y2 - y0) / ch));
    if (!target.attributes.empty()) out.attributes.push_back(target.attributes[i]);
  }
  return out;
}

/// Random shortest-side resize, then a random crop, then a resize of the crop
/// to the fixed model input size. Boxes follow the crop.
inline std::pair<Image, DetectionTarget> scale_crop_augment(const Image& image, const DetectionTarget& target,
                                                            Rng& rng, const AugmentConfig& cfg,
                                                            AugmentRecord* record = nullptr) {
  cfg.validate();
  const auto side = static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(cfg.min_side),
                                                             static_cast<std::int64_t>(cfg.max_side)));
  Image resized = resize_shortest_side(image, side);
  auto draw = [&](std::size_t limit) {
    const std::size_t hi = std::min(cfg.max_crop, limit), lo = std::min(cfg.min_crop, hi);
    return static_cast<std::size_t>(rng.uniform_int(static_cast<std::int64_t>(lo), static_cast<std::int64_t>(hi)));
  };
  const std::size_t ch = draw(resized.height), cw = draw(resized.width);
  const auto y0 = static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(resized.height - ch + 1)));
  const auto x0 = static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(resized.width - cw + 1)));
  if (record) *record = {side, y0, x0, ch, cw};
  DetectionTarget boxes = crop_target(target, resized.height, resized.width, y0, x0, ch, cw, cfg.min_visible);
  Image out = (y0 == 0 && x0 == 0 && ch == resized.height && cw == resized.width) ? std::move(resized)
                                                                                   : crop(resized, y0, x0, ch, cw);
  return {resize_bilinear(out, cfg.output, cfg.output), std::move(boxes)};
}

/// Deterministic evaluation resize to the model input size.
inline Image test_time_resize(const Image& image, std::size_t output = data::image_size) {
  return resize_bilinear(resize_shortest_side(image, output), output, output);
}

}  // namespace unit
