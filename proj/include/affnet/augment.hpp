#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "affnet/ami.hpp"
#include "affnet/tensor.hpp"

namespace affnet::eval {

enum class AugmentMode { kNone, kFlip, kFull };

inline const char* to_string(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::kNone: return "none";
    case AugmentMode::kFlip: return "flip";
    case AugmentMode::kFull: return "full";
  }
  return "full";
}

inline AugmentMode parse_augment_mode(const std::string& name) {
  if (name == "none") return AugmentMode::kNone;
  if (name == "flip") return AugmentMode::kFlip;
  if (name == "full") return AugmentMode::kFull;
  throw std::invalid_argument("unknown augment mode: " + name);
}

// Exact horizontal mirror; applying it twice restores the input bit for bit.
template <typename T>
Tensor<T> hflip(const Tensor<T>& image) {
  detail::require(image.rank() == 3, "hflip: image must be H x W x C");
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor<T> out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = image[(y * w + (w - 1 - x)) * c + ch];
  return out;
}

namespace augdetail {

// Bilinear sample with zero fill outside the image.
template <typename T>
double sample(const Tensor<T>& image, double y, double x, std::size_t ch) {
  const long h = static_cast<long>(image.dim(0));
  const long w = static_cast<long>(image.dim(1));
  const std::size_t c = image.dim(2);
  const long y0 = static_cast<long>(std::floor(y));
  const long x0 = static_cast<long>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx) {
      const long yy = y0 + dy, xx = x0 + dx;
      if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
      const double weight = (dy ? fy : 1.0 - fy) * (dx ? fx : 1.0 - fx);
      acc += weight *
             static_cast<double>(
                 image[(static_cast<std::size_t>(yy) * w + xx) * c + ch]);
    }
  return acc;
}

template <typename T, typename MapFn>
Tensor<T> warp(const Tensor<T>& image, MapFn&& source_of) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor<T> out(image.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto [sy, sx] = source_of(static_cast<double>(y), static_cast<double>(x));
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = static_cast<T>(sample(image, sy, sx, ch));
    }
  return out;
}

}  // namespace augdetail

// Rotation about the image center, bilinear, zero fill.
template <typename T>
Tensor<T> rotate_bilinear(const Tensor<T>& image, double degrees) {
  detail::require(image.rank() == 3, "rotate: image must be H x W x C");
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(image.dim(0)) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.dim(1)) - 1.0) / 2.0;
  return augdetail::warp(image, [=](double y, double x) {
    const double dy = y - cy, dx = x - cx;
    return std::pair<double, double>{cy + cs * dy - sn * dx,
                                     cx + sn * dy + cs * dx};
  });
}

// Center crop-and-resize: scale < 1 zooms in, scale > 1 zooms out with zero
// fill at the borders.
template <typename T>
Tensor<T> center_zoom(const Tensor<T>& image, double scale) {
  detail::require(image.rank() == 3, "zoom: image must be H x W x C");
  detail::require(scale > 0.0, "zoom scale must be positive");
  const double cy = (static_cast<double>(image.dim(0)) - 1.0) / 2.0;
  const double cx = (static_cast<double>(image.dim(1)) - 1.0) / 2.0;
  return augdetail::warp(image, [=](double y, double x) {
    return std::pair<double, double>{cy + (y - cy) * scale,
                                     cx + (x - cx) * scale};
  });
}

// Label-preserving expansion of one composite image. The original is always
// first; the op list is fixed per mode, so the result is deterministic for
// any seed value (the seed is reserved for future jittered ops).
inline std::vector<ami::AffectiveImage> augment(
    const ami::AffectiveImage& image, std::uint64_t seed,
    AugmentMode mode = AugmentMode::kFull) {
  (void)seed;
  std::vector<ami::AffectiveImage> out;
  out.push_back(image);
  auto push = [&out, &image](Tensor<double> pixels) {
    out.push_back(
        ami::AffectiveImage{std::move(pixels), image.source_video_id,
                            image.frames_used});
  };
  if (mode == AugmentMode::kNone) return out;
  push(hflip(image.pixels));
  if (mode == AugmentMode::kFlip) return out;
  push(rotate_bilinear(image.pixels, 5.0));
  push(rotate_bilinear(image.pixels, -5.0));
  push(center_zoom(image.pixels, 0.95));
  push(center_zoom(image.pixels, 1.05));
  return out;
}

inline int augment_count(AugmentMode mode) {
  switch (mode) {
    case AugmentMode::kNone: return 1;
    case AugmentMode::kFlip: return 2;
    case AugmentMode::kFull: return 6;
  }
  return 6;
}

}  // namespace affnet::eval
