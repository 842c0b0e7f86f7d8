#pragma once

// Independent reference computations used only by the test suites. They
// deliberately share no code path with the library routines they check.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "agvlab/geometry.hpp"
#include "agvlab/image.hpp"

namespace oracle {

/// Exhaustive Otsu: class weights/means in floating point, smallest
/// maximising threshold wins.
inline int otsu_bruteforce(const std::array<std::uint64_t, 256>& hist) {
  double total = 0.0;
  for (auto c : hist) total += static_cast<double>(c);
  int best_t = -1;
  double best = -1.0;
  for (int t = 0; t < 256; ++t) {
    double n0 = 0, s0 = 0, n1 = 0, s1 = 0;
    for (int i = 0; i <= t; ++i) {
      n0 += static_cast<double>(hist[i]);
      s0 += static_cast<double>(hist[i]) * i;
    }
    for (int i = t + 1; i < 256; ++i) {
      n1 += static_cast<double>(hist[i]);
      s1 += static_cast<double>(hist[i]) * i;
    }
    if (n0 == 0 || n1 == 0) continue;
    const double w0 = n0 / total, w1 = n1 / total;
    const double mu0 = s0 / n0, mu1 = s1 / n1;
    const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
    if (var > best) {
      best = var;
      best_t = t;
    }
  }
  if (best_t < 0)
    for (int i = 0; i < 256; ++i)
      if (hist[i]) return i;
  return best_t;
}

/// Direct 2D convolution with the binomial kernel and clamped indexing.
inline agvlab::GrayImage blur_naive(const agvlab::GrayImage& img) {
  static constexpr int k[3][3] = {{1, 2, 1}, {2, 4, 2}, {1, 2, 1}};
  agvlab::GrayImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double acc = 0.0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int sx = std::clamp(x + dx, 0, img.width() - 1);
          const int sy = std::clamp(y + dy, 0, img.height() - 1);
          acc += k[dy + 1][dx + 1] * img.at(sx, sy);
        }
      out.at(x, y) = static_cast<std::uint8_t>(std::floor(acc / 16.0 + 0.5));
    }
  return out;
}

/// Set-based morphology with explicit padding value.
inline agvlab::BinaryImage morph_naive(const agvlab::BinaryImage& img, bool erode) {
  agvlab::BinaryImage out(img.width(), img.height());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      bool any = false, all = true;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const bool v = img.contains(x + dx, y + dy) ? img.at(x + dx, y + dy) != 0 : erode;
          any = any || v;
          all = all && v;
        }
      out.at(x, y) = erode ? all : any;
    }
  return out;
}

inline double min_edge_distance(agvlab::Point2 p, const std::vector<agvlab::Point2>& v) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const agvlab::Point2 a = v[i], b = v[(i + 1) % v.size()];
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double len2 = ex * ex + ey * ey;
    double t = len2 > 0 ? ((p.x - a.x) * ex + (p.y - a.y) * ey) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    best = std::min(best, std::hypot(p.x - (a.x + t * ex), p.y - (a.y + t * ey)));
  }
  return best;
}

/// Winding-number containment.
inline bool inside_winding(agvlab::Point2 p, const std::vector<agvlab::Point2>& v) {
  int wn = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const agvlab::Point2 a = v[i], b = v[(i + 1) % v.size()];
    const double c = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
    if (a.y <= p.y) {
      if (b.y > p.y && c > 0) ++wn;
    } else if (b.y <= p.y && c < 0) {
      --wn;
    }
  }
  return wn != 0;
}

struct GridPole {
  agvlab::Point2 point;
  double radius = -1.0;
};

/// Dense grid search for the interior point maximising the distance to the
/// polygon boundary.
inline GridPole pole_grid_search(const agvlab::Polygon& poly, double step) {
  const auto& v = poly.vertices;
  double x0 = v[0].x, x1 = v[0].x, y0 = v[0].y, y1 = v[0].y;
  for (auto p : v) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  GridPole best;
  const long ny = static_cast<long>(std::floor((y1 - y0) / step));
  const long nx = static_cast<long>(std::floor((x1 - x0) / step));
  for (long iy = 0; iy <= ny; ++iy)
    for (long ix = 0; ix <= nx; ++ix) {
      const double x = x0 + ix * step, y = y0 + iy * step;
      if (!inside_winding({x, y}, v)) continue;
      const double d = min_edge_distance({x, y}, v);
      if (d > best.radius) best = {{x, y}, d};
    }
  return best;
}

}  // namespace oracle
