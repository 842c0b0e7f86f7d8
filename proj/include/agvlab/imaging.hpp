#pragma once

// Pixel-level primitives shared by the onboard line follower and the edge
// perception pipeline. Everything here is a pure function.

#include <array>
#include <cstdint>
#include <optional>
#include <utility>

#include "agvlab/image.hpp"

namespace agvlab {

inline GrayImage to_grayscale(const RgbImage& rgb) {
  if (rgb.empty()) throw DimensionError("cannot convert an empty color image");
  GrayImage out(rgb.width(), rgb.height());
  auto src = rgb.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i)
    dst[i] = clamp_u8(0.299 * src[i].r + 0.587 * src[i].g + 0.114 * src[i].b);
  return out;
}

/// 3x3 binomial blur, (1/16)[1 2 1; 2 4 2; 1 2 1], edge-replicated borders,
/// rounded half up.
inline GrayImage gaussian_blur3(const GrayImage& img) {
  if (img.empty()) throw DimensionError("cannot blur an empty image");
  const int w = img.width(), h = img.height();
  // Separable pass: horizontal [1 2 1] kept in 16-bit sums, then vertical.
  std::vector<std::uint16_t> horiz(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      horiz[static_cast<std::size_t>(y) * w + x] = static_cast<std::uint16_t>(
          img.clamped(x - 1, y) + 2 * img.at(x, y) + img.clamped(x + 1, y));
    }
  }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    const int ym = y > 0 ? y - 1 : 0;
    const int yp = y + 1 < h ? y + 1 : h - 1;
    const auto* rm = &horiz[static_cast<std::size_t>(ym) * w];
    const auto* r0 = &horiz[static_cast<std::size_t>(y) * w];
    const auto* rp = &horiz[static_cast<std::size_t>(yp) * w];
    for (int x = 0; x < w; ++x)
      out.at(x, y) = static_cast<std::uint8_t>((rm[x] + 2 * r0[x] + rp[x] + 8) / 16);
  }
  return out;
}

enum class MorphOp { Erode, Dilate };

/// 3x3 square structuring element over the 1-valued pixels. Out-of-bounds
/// neighbours count as 0 for dilation and 1 for erosion, so the frame edge
/// never eats into the path.
inline BinaryImage morph(const BinaryImage& img, MorphOp op) {
  const int w = img.width(), h = img.height();
  const bool erode = op == MorphOp::Erode;
  const std::uint8_t outside = erode ? 1 : 0;
  auto sample = [&](int x, int y) -> std::uint8_t {
    return img.contains(x, y) ? img.at(x, y) : outside;
  };
  // Separable: row pass then column pass (min for erode, max for dilate).
  BinaryImage rows(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t a = sample(x - 1, y), b = img.at(x, y), c = sample(x + 1, y);
      rows.at(x, y) = erode ? (a & b & c) : (a | b | c);
    }
  BinaryImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::uint8_t a = y > 0 ? rows.at(x, y - 1) : outside;
      const std::uint8_t b = rows.at(x, y);
      const std::uint8_t c = y + 1 < h ? rows.at(x, y + 1) : outside;
      out.at(x, y) = erode ? (a & b & c) : (a | b | c);
    }
  return out;
}

/// Erosion followed by dilation.
inline BinaryImage morph_open(const BinaryImage& img) {
  return morph(morph(img, MorphOp::Erode), MorphOp::Dilate);
}

using Histogram = std::array<std::uint64_t, 256>;

inline Histogram histogram(const GrayImage& img) {
  Histogram hist{};
  for (auto v : img.pixels()) ++hist[v];
  return hist;
}

struct OtsuResult {
  int threshold = 0;
  bool degenerate = false;  ///< only one intensity level present
};

/// Threshold t maximising the between-class variance when the classes are
/// {i <= t} and {i > t}. The smallest maximiser wins ties. With a single
/// occupied level the threshold is that level and `degenerate` is set.
inline OtsuResult otsu_threshold(const Histogram& hist) {
  std::int64_t total = 0, total_sum = 0;
  for (int i = 0; i < 256; ++i) {
    total += static_cast<std::int64_t>(hist[i]);
    total_sum += static_cast<std::int64_t>(hist[i]) * i;
  }
  if (total == 0) throw DimensionError("histogram is empty");

  // N^2 * sigma_b^2 = (N*S0 - n0*S)^2 / (n0*n1); the numerator is exact in
  // 64-bit integers so equal splits always score bit-identically.
  std::int64_t n0 = 0, s0 = 0;
  long double best = -1.0L;
  int best_t = -1;
  for (int t = 0; t < 256; ++t) {
    n0 += static_cast<std::int64_t>(hist[t]);
    s0 += static_cast<std::int64_t>(hist[t]) * t;
    const std::int64_t n1 = total - n0;
    if (n0 == 0 || n1 == 0) continue;
    const long double num = static_cast<long double>(total * s0 - n0 * total_sum);
    const long double score =
        num * num / (static_cast<long double>(n0) * static_cast<long double>(n1));
    if (score > best) {
      best = score;
      best_t = t;
    }
  }
  if (best_t < 0) {
    int level = 0;
    while (hist[level] == 0) ++level;
    return {level, true};
  }
  return {best_t, false};
}

struct Segmentation {
  int threshold = 0;
  BinaryImage out;
};

/// Otsu binarisation; intensities <= threshold become path (1).
inline Segmentation segment_otsu(const GrayImage& img) {
  if (img.empty()) throw DimensionError("cannot segment an empty image");
  const OtsuResult r = otsu_threshold(histogram(img));
  BinaryImage out(img.width(), img.height());
  auto src = img.pixels();
  auto dst = out.pixels();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] <= r.threshold ? 1 : 0;
  return {r.threshold, std::move(out)};
}

inline std::uint64_t path_mass(const BinaryImage& bin, const RoiSpec& roi) {
  require_inside(bin, roi);
  std::uint64_t n = 0;
  for (int y = roi.y0; y < roi.y0 + roi.h; ++y)
    for (int x = roi.x0; x < roi.x0 + roi.w; ++x) n += bin.at(x, y);
  return n;
}

/// Horizontal offset (px) of the ROI's path centroid from the image's
/// vertical symmetry axis. Positive means the path lies right of centre.
/// Empty when the ROI holds no path pixel.
inline std::optional<double> path_error(const BinaryImage& bin, const RoiSpec& roi) {
  require_inside(bin, roi);
  std::uint64_t count = 0, sum_x = 0;
  for (int y = roi.y0; y < roi.y0 + roi.h; ++y) {
    auto row = bin.row(y);
    for (int x = roi.x0; x < roi.x0 + roi.w; ++x)
      if (row[static_cast<std::size_t>(x)]) {
        ++count;
        sum_x += static_cast<std::uint64_t>(x);
      }
  }
  if (count == 0) return std::nullopt;
  const double axis = (bin.width() - 1) / 2.0;
  return static_cast<double>(sum_x) / static_cast<double>(count) - axis;
}

/// Path fraction on each 1-px border strip of an ROI.
struct BoundaryProfile {
  double left = 0, right = 0, top = 0, bottom = 0;
  friend bool operator==(const BoundaryProfile&, const BoundaryProfile&) = default;
};

inline BoundaryProfile boundary_profile(const BinaryImage& bin, const RoiSpec& roi) {
  require_inside(bin, roi);
  const int x1 = roi.x0 + roi.w - 1, y1 = roi.y0 + roi.h - 1;
  int left = 0, right = 0, top = 0, bottom = 0;
  for (int y = roi.y0; y <= y1; ++y) {
    left += bin.at(roi.x0, y);
    right += bin.at(x1, y);
  }
  for (int x = roi.x0; x <= x1; ++x) {
    top += bin.at(x, roi.y0);
    bottom += bin.at(x, y1);
  }
  return {static_cast<double>(left) / roi.h, static_cast<double>(right) / roi.h,
          static_cast<double>(top) / roi.w, static_cast<double>(bottom) / roi.w};
}

/// First and last ROI row (absolute) where column `x` holds path.
struct Run {
  int first = 0;
  int last = 0;
};

inline std::optional<Run> column_run(const BinaryImage& bin, const RoiSpec& roi, int x) {
  require_inside(bin, roi);
  if (x < roi.x0 || x >= roi.x0 + roi.w) throw BoundsError("column outside ROI");
  std::optional<Run> run;
  for (int y = roi.y0; y < roi.y0 + roi.h; ++y) {
    if (!bin.at(x, y)) continue;
    if (!run) run = Run{y, y};
    run->last = y;
  }
  return run;
}

inline GrayImage mirror_horizontal(const GrayImage& img) {
  GrayImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(img.width() - 1 - x, y) = img.at(x, y);
  return out;
}

inline BinaryImage mirror_horizontal(const BinaryImage& img) {
  BinaryImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) out.at(img.width() - 1 - x, y) = img.at(x, y);
  return out;
}

}  // namespace agvlab
