#pragma once

// Projective rectification, polygon handling, pole of inaccessibility and
// pixel <-> world translation for the destination grid.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <queue>
#include <span>
#include <vector>

#include "agvlab/image.hpp"
#include "json.hpp"

namespace agvlab {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  Point2 operator+(Point2 o) const noexcept { return {x + o.x, y + o.y}; }
  Point2 operator-(Point2 o) const noexcept { return {x - o.x, y - o.y}; }
  Point2 operator*(double s) const noexcept { return {x * s, y * s}; }
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double dot(Point2 a, Point2 b) noexcept { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) noexcept { return a.x * b.y - a.y * b.x; }
inline double norm(Point2 a) noexcept { return std::hypot(a.x, a.y); }
inline double distance(Point2 a, Point2 b) noexcept { return norm(a - b); }

inline double segment_distance(Point2 p, Point2 a, Point2 b) noexcept {
  const Point2 ab = b - a;
  const double len2 = dot(ab, ab);
  double t = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return distance(p, a + ab * t);
}

// ---------------------------------------------------------------------------
// Homography

using Mat3 = std::array<std::array<double, 3>, 3>;

/// 3x3 projective map with h[2][2] normalised to 1 where possible.
class Homography {
 public:
  Homography() : h_{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}} {}
  explicit Homography(const Mat3& m) : h_(m) {
    normalize();
    if (std::abs(determinant()) <= 1e-9) throw DegeneracyError("homography is not invertible");
  }

  static Homography identity() { return Homography(); }
  static Homography scale(double sx, double sy) { return Homography(Mat3{{{sx, 0, 0}, {0, sy, 0}, {0, 0, 1}}}); }
  static Homography translation(double tx, double ty) {
    return Homography(Mat3{{{1, 0, tx}, {0, 1, ty}, {0, 0, 1}}});
  }

  const Mat3& matrix() const noexcept { return h_; }
  double operator()(int r, int c) const noexcept { return h_[r][c]; }

  Point2 apply(Point2 p) const noexcept {
    const double w = h_[2][0] * p.x + h_[2][1] * p.y + h_[2][2];
    return {(h_[0][0] * p.x + h_[0][1] * p.y + h_[0][2]) / w,
            (h_[1][0] * p.x + h_[1][1] * p.y + h_[1][2]) / w};
  }

  double determinant() const noexcept {
    const auto& m = h_;
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  }

  Homography inverse() const {
    const auto& m = h_;
    const double det = determinant();
    Mat3 inv{};
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    return Homography(inv);
  }

  /// (this * other)(p) == this(other(p))
  Homography operator*(const Homography& o) const {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[i][j] += h_[i][k] * o.h_[k][j];
    return Homography(r);
  }

 private:
  void normalize() {
    const double s = h_[2][2];
    if (std::abs(s) > 1e-12)
      for (auto& row : h_)
        for (auto& v : row) v /= s;
  }

  Mat3 h_;
};

namespace detail {

/// Solves a dense n x n system in place with partial pivoting.
template <std::size_t N>
bool solve_linear(std::array<std::array<double, N + 1>, N>& a) {
  for (std::size_t col = 0; col < N; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < N; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-12) return false;
    std::swap(a[piv], a[col]);
    for (std::size_t r = 0; r < N; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c <= N; ++c) a[r][c] -= f * a[col][c];
    }
  }
  for (std::size_t r = 0; r < N; ++r) {
    a[r][N] /= a[r][r];
    a[r][r] = 1.0;
  }
  return true;
}

/// Similarity taking the centroid to the origin and the mean distance to sqrt(2).
inline Homography normalizing_transform(std::span<const Point2> pts) {
  Point2 c{};
  for (auto p : pts) c = c + p;
  c = c * (1.0 / static_cast<double>(pts.size()));
  double mean = 0.0;
  for (auto p : pts) mean += distance(p, c);
  mean /= static_cast<double>(pts.size());
  const double s = mean > 0.0 ? std::sqrt(2.0) / mean : 1.0;
  return Homography(Mat3{{{s, 0, -s * c.x}, {0, s, -s * c.y}, {0, 0, 1}}});
}

inline bool any_three_collinear(std::span<const Point2> q) {
  double scale = 0.0;
  for (auto a : q)
    for (auto b : q) scale = std::max(scale, distance(a, b));
  if (scale == 0.0) return true;
  for (std::size_t i = 0; i < q.size(); ++i)
    for (std::size_t j = i + 1; j < q.size(); ++j)
      for (std::size_t k = j + 1; k < q.size(); ++k)
        if (std::abs(cross(q[j] - q[i], q[k] - q[i])) <= 1e-9 * scale * scale) return true;
  return false;
}

}  // namespace detail

/// Least-squares DLT (h22 = 1) over n >= 4 correspondences in normalised
/// coordinates. With exactly 4 points the system is square and solved exactly.
inline Homography homography_fit(std::span<const Point2> src, std::span<const Point2> dst) {
  if (src.size() != dst.size() || src.size() < 4)
    throw DegeneracyError("homography needs at least 4 correspondences");
  const Homography ts = detail::normalizing_transform(src);
  const Homography td = detail::normalizing_transform(dst);
  std::array<std::array<double, 9>, 8> ata{};
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Point2 s = ts.apply(src[i]);
    const Point2 d = td.apply(dst[i]);
    const std::array<std::array<double, 9>, 2> rows{{
        {s.x, s.y, 1, 0, 0, 0, -s.x * d.x, -s.y * d.x, d.x},
        {0, 0, 0, s.x, s.y, 1, -s.x * d.y, -s.y * d.y, d.y},
    }};
    for (const auto& r : rows)
      for (int a = 0; a < 8; ++a)
        for (int b = 0; b < 9; ++b) ata[a][b] += r[a] * r[b];
  }
  if (!detail::solve_linear<8>(ata)) throw DegeneracyError("degenerate point configuration");
  Mat3 m{{{ata[0][8], ata[1][8], ata[2][8]}, {ata[3][8], ata[4][8], ata[5][8]}, {ata[6][8], ata[7][8], 1.0}}};
  return td.inverse() * Homography(m) * ts;
}

/// Exact 4-point homography mapping src[i] to dst[i].
inline Homography homography_from_points(std::span<const Point2> src, std::span<const Point2> dst) {
  if (src.size() != 4 || dst.size() != 4)
    throw DegeneracyError("homography_from_points takes exactly 4 correspondences");
  if (detail::any_three_collinear(src) || detail::any_three_collinear(dst))
    throw DegeneracyError("three of the four points are collinear");
  return homography_fit(src, dst);
}

inline double bilinear(const GrayImage& img, double x, double y, std::uint8_t outside = 255) {
  if (!(x >= 0.0 && y >= 0.0 && x <= img.width() - 1 && y <= img.height() - 1)) return outside;
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = img.at(x0, y0) * (1 - fx) + img.at(x1, y0) * fx;
  const double bot = img.at(x0, y1) * (1 - fx) + img.at(x1, y1) * fx;
  return top * (1 - fy) + bot * fy;
}

/// Output pixel (u,v) takes the bilinear source sample at h^-1(u,v);
/// samples falling outside the source are white.
inline GrayImage warp_image(const GrayImage& img, const Homography& h, int out_w, int out_h) {
  const Homography inv = h.inverse();
  GrayImage out(out_w, out_h, 255);
  for (int v = 0; v < out_h; ++v)
    for (int u = 0; u < out_w; ++u) {
      const Point2 s = inv.apply({static_cast<double>(u), static_cast<double>(v)});
      out.at(u, v) = clamp_u8(bilinear(img, s.x, s.y));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Polygons

/// Closed implicitly. Counterclockwise means positive shoelace area in the
/// coordinates the vertices are expressed in.
struct Polygon {
  std::vector<Point2> vertices;
  friend bool operator==(const Polygon&, const Polygon&) = default;
};

inline double signed_area(const Polygon& poly) {
  const auto& v = poly.vertices;
  double a = 0.0;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) a += cross(v[j], v[i]);
  return a / 2.0;
}

inline Polygon make_ccw(Polygon poly) {
  if (poly.vertices.size() >= 3 && signed_area(poly) < 0.0)
    std::reverse(poly.vertices.begin(), poly.vertices.end());
  return poly;
}

struct Box {
  double min_x, min_y, max_x, max_y;
};

inline Box bounding_box(const Polygon& poly) {
  Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
        -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (auto p : poly.vertices) {
    b.min_x = std::min(b.min_x, p.x);
    b.min_y = std::min(b.min_y, p.y);
    b.max_x = std::max(b.max_x, p.x);
    b.max_y = std::max(b.max_y, p.y);
  }
  return b;
}

/// Even-odd containment (boundary points may land either side).
inline bool contains(const Polygon& poly, Point2 p) {
  const auto& v = poly.vertices;
  bool inside = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y) &&
        p.x < (v[j].x - v[i].x) * (p.y - v[i].y) / (v[j].y - v[i].y) + v[i].x)
      inside = !inside;
  }
  return inside;
}

/// Positive inside, negative outside; magnitude is the distance to the
/// nearest edge.
inline double point_polygon_distance(Point2 p, const Polygon& poly) {
  const auto& v = poly.vertices;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++)
    best = std::min(best, segment_distance(p, v[j], v[i]));
  if (best == 0.0) return 0.0;
  return contains(poly, p) ? best : -best;
}

namespace detail {

inline int orientation(Point2 a, Point2 b, Point2 c) {
  const double v = cross(b - a, c - a);
  const double scale = std::max({norm(b - a), norm(c - a), 1e-300});
  if (std::abs(v) <= 1e-12 * scale * scale) return 0;
  return v > 0 ? 1 : -1;
}

inline bool on_segment(Point2 a, Point2 b, Point2 p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

inline bool segments_intersect(Point2 p1, Point2 p2, Point2 q1, Point2 q2) {
  const int o1 = orientation(p1, p2, q1), o2 = orientation(p1, p2, q2);
  const int o3 = orientation(q1, q2, p1), o4 = orientation(q1, q2, p2);
  if (o1 != o2 && o3 != o4) return true;
  if (o1 == 0 && on_segment(p1, p2, q1)) return true;
  if (o2 == 0 && on_segment(p1, p2, q2)) return true;
  if (o3 == 0 && on_segment(q1, q2, p1)) return true;
  if (o4 == 0 && on_segment(q1, q2, p2)) return true;
  return false;
}

}  // namespace detail

/// True if the two polygons share any area or boundary point.
inline bool polygons_overlap(const Polygon& a, const Polygon& b) {
  const auto& u = a.vertices;
  const auto& v = b.vertices;
  if (u.empty() || v.empty()) return false;
  for (std::size_t i = 0, j = u.size() - 1; i < u.size(); j = i++)
    for (std::size_t k = 0, l = v.size() - 1; k < v.size(); l = k++)
      if (detail::segments_intersect(u[j], u[i], v[l], v[k])) return true;
  return contains(a, v[0]) || contains(b, u[0]);
}

/// At least three distinct vertices, nonzero area, and no two edges touch
/// except neighbours at their shared vertex.
inline bool is_simple(const Polygon& poly) {
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i)
    if (v[i] == v[(i + 1) % n]) return false;
  if (std::abs(signed_area(poly)) <= 1e-12) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point2 a1 = v[i], a2 = v[(i + 1) % n];
    for (std::size_t j = i + 1; j < n; ++j) {
      const Point2 b1 = v[j], b2 = v[(j + 1) % n];
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) {
        // Neighbouring edges may only share their common vertex: reject a
        // fold-back where one edge runs back along the other.
        const Point2 shared = j == i + 1 ? a2 : a1;
        const Point2 other_a = j == i + 1 ? a1 : a2;
        const Point2 other_b = j == i + 1 ? b2 : b1;
        if (detail::orientation(other_a, shared, other_b) == 0 &&
            dot(other_a - shared, other_b - shared) > 0.0)
          return false;
        continue;
      }
      if (detail::segments_intersect(a1, a2, b1, b2)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Pole of inaccessibility

/// Centre and clearance of the largest inscribed circle. Units follow the
/// input polygon (mm for world polygons).
struct DropPoint {
  double x = 0.0;
  double y = 0.0;
  double radius = 0.0;
};

namespace detail {

struct PoleCell {
  double x, y, half, dist, potential;
  PoleCell(double cx, double cy, double h, const Polygon& poly)
      : x(cx), y(cy), half(h), dist(point_polygon_distance({cx, cy}, poly)),
        potential(dist + h * std::sqrt(2.0)) {}
};

struct PoleCellLess {
  bool operator()(const PoleCell& a, const PoleCell& b) const { return a.potential < b.potential; }
};

}  // namespace detail

/// Quadtree search for the interior point farthest from every edge. Cells
/// are explored best-potential first; a cell whose potential cannot beat the
/// incumbent by more than `precision` is dropped.
inline DropPoint polylabel(const Polygon& poly, double precision = 1.0) {
  if (!(precision > 0.0)) throw DomainError("polylabel precision must be positive");
  if (poly.vertices.size() < 3) throw DegeneracyError("polygon needs at least 3 vertices");
  const Box box = bounding_box(poly);
  const double width = box.max_x - box.min_x, height = box.max_y - box.min_y;
  const double area = signed_area(poly);
  const double cell = std::min(width, height);
  if (cell <= 0.0 || std::abs(area) <= 1e-12 * std::max(width * height, 1e-300))
    throw DegeneracyError("polygon has zero area");

  std::priority_queue<detail::PoleCell, std::vector<detail::PoleCell>, detail::PoleCellLess> queue;
  const double h = cell / 2.0;
  for (double x = box.min_x; x < box.max_x; x += cell)
    for (double y = box.min_y; y < box.max_y; y += cell) queue.emplace(x + h, y + h, h, poly);

  // Seed the incumbent with the area centroid and the box centre.
  Point2 c{};
  {
    const auto& v = poly.vertices;
    double a6 = 0.0;
    for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
      const double f = cross(v[j], v[i]);
      c = c + (v[j] + v[i]) * f;
      a6 += f * 3.0;
    }
    c = a6 != 0.0 ? c * (1.0 / a6) : v.front();
  }
  detail::PoleCell best(c.x, c.y, 0.0, poly);
  const detail::PoleCell box_cell(box.min_x + width / 2.0, box.min_y + height / 2.0, 0.0, poly);
  if (box_cell.dist > best.dist) best = box_cell;

  while (!queue.empty()) {
    const detail::PoleCell top = queue.top();
    queue.pop();
    if (top.dist > best.dist) best = top;
    if (top.potential - best.dist <= precision) continue;
    const double q = top.half / 2.0;
    queue.emplace(top.x - q, top.y - q, q, poly);
    queue.emplace(top.x + q, top.y - q, q, poly);
    queue.emplace(top.x - q, top.y + q, q, poly);
    queue.emplace(top.x + q, top.y + q, q, poly);
  }
  return {best.x, best.y, best.dist};
}

// ---------------------------------------------------------------------------
// Mask -> polygon

struct ComponentStats {
  int count = 0;         ///< components at or above the area floor
  int label = -1;        ///< label of the single qualifying component
  std::vector<int> labels;  ///< per-pixel label, -1 for background
  std::vector<int> areas;
};

/// 4-connected labelling. Components smaller than `min_area` are ignored
/// when counting.
inline ComponentStats label_components(const BinaryImage& mask, int min_area) {
  const int w = mask.width(), h = mask.height();
  ComponentStats st;
  st.labels.assign(mask.size(), -1);
  std::vector<int> stack;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int idx = y * w + x;
      if (!mask.at(x, y) || st.labels[idx] >= 0) continue;
      const int label = static_cast<int>(st.areas.size());
      int area = 0;
      stack.push_back(idx);
      st.labels[idx] = label;
      while (!stack.empty()) {
        const int cur = stack.back();
        stack.pop_back();
        ++area;
        const int cx = cur % w, cy = cur / w;
        const int nx[4] = {cx - 1, cx + 1, cx, cx};
        const int ny[4] = {cy, cy, cy - 1, cy + 1};
        for (int k = 0; k < 4; ++k) {
          if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
          const int n = ny[k] * w + nx[k];
          if (mask.at(nx[k], ny[k]) && st.labels[n] < 0) {
            st.labels[n] = label;
            stack.push_back(n);
          }
        }
      }
      st.areas.push_back(area);
      if (area >= min_area) {
        ++st.count;
        st.label = label;
      }
    }
  if (st.count != 1) st.label = -1;
  return st;
}

/// Moore-neighbourhood trace of the outer boundary of one labelled
/// component; returns pixel centres in traversal order.
inline std::vector<Point2> trace_boundary(const std::vector<int>& labels, int w, int h, int label) {
  auto fg = [&](int x, int y) {
    return x >= 0 && y >= 0 && x < w && y < h && labels[static_cast<std::size_t>(y * w + x)] == label;
  };
  int sx = -1, sy = -1;
  for (int i = 0; i < w * h && sx < 0; ++i)
    if (labels[static_cast<std::size_t>(i)] == label) {
      sx = i % w;
      sy = i / w;
    }
  if (sx < 0) return {};
  // Clockwise in image coordinates (y down).
  static constexpr int dx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
  static constexpr int dy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  auto dir_of = [](int ddx, int ddy) {
    for (int k = 0; k < 8; ++k)
      if (dx[k] == ddx && dy[k] == ddy) return k;
    return 4;
  };
  std::vector<std::pair<int, int>> contour{{sx, sy}};
  int cx = sx, cy = sy;
  int back = 4;  // west of the start pixel is background
  const std::size_t limit = static_cast<std::size_t>(w) * h * 4 + 16;
  for (std::size_t iter = 0; iter < limit; ++iter) {
    int found = -1;
    for (int k = 1; k <= 8; ++k) {
      const int d = (back + k) % 8;
      if (fg(cx + dx[d], cy + dy[d])) {
        found = d;
        break;
      }
    }
    if (found < 0) break;  // isolated pixel
    const int nx = cx + dx[found], ny = cy + dy[found];
    const int prev = (found + 7) % 8;
    const int bx = cx + dx[prev], by = cy + dy[prev];
    if (contour.size() >= 2 && cx == sx && cy == sy && nx == contour[1].first &&
        ny == contour[1].second)
      break;
    contour.emplace_back(nx, ny);
    back = dir_of(bx - nx, by - ny);
    cx = nx;
    cy = ny;
  }
  if (contour.size() > 1 && contour.back() == contour.front()) contour.pop_back();
  std::vector<Point2> pts;
  pts.reserve(contour.size());
  for (auto [x, y] : contour) pts.push_back({static_cast<double>(x), static_cast<double>(y)});
  return pts;
}

namespace detail {

inline void douglas_peucker(std::span<const Point2> pts, double eps, std::vector<Point2>& out) {
  // Keeps pts.front(); the caller appends the final endpoint.
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, pts.size() - 1}};
  std::vector<char> keep(pts.size(), 0);
  keep.front() = keep.back() = 1;
  while (!stack.empty()) {
    auto [a, b] = stack.back();
    stack.pop_back();
    double worst = -1.0;
    std::size_t idx = a;
    for (std::size_t i = a + 1; i < b; ++i) {
      const double d = segment_distance(pts[i], pts[a], pts[b]);
      if (d > worst) {
        worst = d;
        idx = i;
      }
    }
    if (worst > eps) {
      keep[idx] = 1;
      stack.push_back({a, idx});
      stack.push_back({idx, b});
    }
  }
  for (std::size_t i = 0; i + 1 < pts.size(); ++i)
    if (keep[i]) out.push_back(pts[i]);
}

}  // namespace detail

/// Douglas-Peucker on a closed ring. The ring is split at the vertex
/// farthest from the first one and each half simplified independently.
inline std::vector<Point2> simplify_closed(const std::vector<Point2>& ring, double eps) {
  if (ring.size() <= 3) return ring;
  std::size_t far = 0;
  double far_d = -1.0;
  for (std::size_t i = 1; i < ring.size(); ++i) {
    const double d = distance(ring[i], ring[0]);
    if (d > far_d) {
      far_d = d;
      far = i;
    }
  }
  std::vector<Point2> first(ring.begin(), ring.begin() + static_cast<std::ptrdiff_t>(far) + 1);
  std::vector<Point2> second(ring.begin() + static_cast<std::ptrdiff_t>(far), ring.end());
  second.push_back(ring[0]);
  std::vector<Point2> out;
  detail::douglas_peucker(first, eps, out);
  detail::douglas_peucker(second, eps, out);
  return out;
}

inline constexpr int kMinDropArea = 25;

/// Traces the single foreground component (4-connected, area >= 25 px;
/// smaller specks are ignored) and simplifies its outline. Vertices are
/// pixel centres, counterclockwise.
inline Polygon polygon_from_mask(const BinaryImage& mask, double epsilon = 2.0) {
  const ComponentStats st = label_components(mask, kMinDropArea);
  if (st.count != 1) throw ExtractionError(st.count);
  const auto ring = trace_boundary(st.labels, mask.width(), mask.height(), st.label);
  Polygon poly;
  for (double eps = epsilon; eps >= 0.25; eps /= 2.0) {
    poly = make_ccw(Polygon{simplify_closed(ring, eps)});
    if (is_simple(poly)) return poly;
  }
  return poly;
}

// ---------------------------------------------------------------------------
// Destination grid

inline constexpr double kCellMm = 280.0;
inline constexpr int kGridCols = 5;
inline constexpr int kGridRows = 2;
inline constexpr int kDestinations = 4;

struct GridIndex {
  int i = 0;  ///< column 0..4 along the marker row
  int j = 0;  ///< row 0..1
  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

/// World positions (mm) of the ten cross-hair markers. Origin is the
/// far-left marker; x runs along the marker row, y toward the second row.
struct MarkerLayout {
  std::array<Point2, kGridCols * kGridRows> points;

  static MarkerLayout standard() {
    MarkerLayout m;
    for (int j = 0; j < kGridRows; ++j)
      for (int i = 0; i < kGridCols; ++i) m.points[flat({i, j})] = {i * kCellMm, j * kCellMm};
    return m;
  }
  static std::size_t flat(GridIndex g) { return static_cast<std::size_t>(g.j * kGridCols + g.i); }
  static GridIndex unflat(std::size_t k) {
    return {static_cast<int>(k) % kGridCols, static_cast<int>(k) / kGridCols};
  }
  Point2 at(GridIndex g) const { return points[flat(g)]; }
};

/// Corner nodes of destination k in the order (0,0),(280,0),(280,280),(0,280).
inline std::array<GridIndex, 4> destination_corners(int k) {
  return {GridIndex{k, 0}, GridIndex{k + 1, 0}, GridIndex{k + 1, 1}, GridIndex{k, 1}};
}

/// Canonical rectified destination tile: 280 x 280 px at 1 px = 1 mm.
inline constexpr int kTilePx = 280;
inline constexpr double kMmPerTilePx = 1.0;

inline Point2 px_to_world(Point2 p, int destination) {
  if (destination < 0 || destination >= kDestinations)
    throw DomainError("destination must be 0..3, got " + std::to_string(destination));
  if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= kTilePx && p.y <= kTilePx))
    throw DomainError("point lies outside the rectified destination tile");
  return {destination * kCellMm + p.x * kMmPerTilePx, p.y * kMmPerTilePx};
}

inline bool inside_destination(Point2 world, int destination) {
  return world.x >= destination * kCellMm && world.x <= (destination + 1) * kCellMm &&
         world.y >= 0.0 && world.y <= kCellMm;
}

// ---------------------------------------------------------------------------
// JSON: polygons are arrays of [x, y] pairs.

inline nlohmann::json polygon_to_json(const Polygon& poly) {
  nlohmann::json arr = nlohmann::json::array();
  for (auto p : poly.vertices) arr.push_back({p.x, p.y});
  return arr;
}

inline Polygon polygon_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("polygon must be an array of [x, y] pairs");
  Polygon poly;
  for (const auto& v : j) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ParseError("polygon vertex must be a [x, y] number pair");
    poly.vertices.push_back({v[0].get<double>(), v[1].get<double>()});
  }
  return poly;
}

}  // namespace agvlab
