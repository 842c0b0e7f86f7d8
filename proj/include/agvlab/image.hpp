#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "agvlab/error.hpp"

namespace agvlab {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Row-major raster with positive dimensions. `Tag` keeps gray and binary
/// images apart at the type level even though both store bytes.
template <typename Pixel, typename Tag>
class Raster {
 public:
  using pixel_type = Pixel;

  Raster() = default;
  Raster(int width, int height, Pixel fill = Pixel{}) : width_(width), height_(height) {
    if (width <= 0 || height <= 0)
      throw DimensionError("image dimensions must be positive, got " + std::to_string(width) +
                           "x" + std::to_string(height));
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
  }
  Raster(int width, int height, std::vector<Pixel> pixels) : Raster(width, height) {
    if (pixels.size() != data_.size())
      throw DimensionError("pixel buffer size does not match " + std::to_string(width) + "x" +
                           std::to_string(height));
    data_ = std::move(pixels);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t size() const noexcept { return data_.size(); }

  Pixel& at(int x, int y) noexcept { return data_[index(x, y)]; }
  const Pixel& at(int x, int y) const noexcept { return data_[index(x, y)]; }
  Pixel& operator()(int x, int y) noexcept { return at(x, y); }
  const Pixel& operator()(int x, int y) const noexcept { return at(x, y); }

  bool contains(int x, int y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  /// Clamped access; edge replication.
  const Pixel& clamped(int x, int y) const noexcept {
    x = x < 0 ? 0 : (x >= width_ ? width_ - 1 : x);
    y = y < 0 ? 0 : (y >= height_ ? height_ - 1 : y);
    return at(x, y);
  }

  std::span<Pixel> pixels() noexcept { return data_; }
  std::span<const Pixel> pixels() const noexcept { return data_; }
  std::span<const Pixel> row(int y) const noexcept {
    return std::span<const Pixel>(data_).subspan(index(0, y), static_cast<std::size_t>(width_));
  }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<Pixel> data_;
};

struct GrayTag {};
struct BinaryTag {};
struct RgbTag {};

/// Intensities 0..255.
using GrayImage = Raster<std::uint8_t, GrayTag>;
/// 1 = path (dark surface), 0 = background.
using BinaryImage = Raster<std::uint8_t, BinaryTag>;
using RgbImage = Raster<Rgb, RgbTag>;

/// Rectangular window; must lie inside the image it is applied to.
struct RoiSpec {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;
  friend bool operator==(const RoiSpec&, const RoiSpec&) = default;
};

template <typename P, typename T>
void require_inside(const Raster<P, T>& img, const RoiSpec& roi) {
  if (roi.w <= 0 || roi.h <= 0 || roi.x0 < 0 || roi.y0 < 0 || roi.x0 + roi.w > img.width() ||
      roi.y0 + roi.h > img.height())
    throw BoundsError("ROI (" + std::to_string(roi.x0) + "," + std::to_string(roi.y0) + "," +
                      std::to_string(roi.w) + "," + std::to_string(roi.h) +
                      ") does not fit a " + std::to_string(img.width()) + "x" +
                      std::to_string(img.height()) + " image");
}

inline std::uint8_t clamp_u8(double v) noexcept {
  if (v <= 0.0) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);
}

}  // namespace agvlab
