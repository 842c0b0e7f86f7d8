#pragma once

// Edge pipeline on the overhead frame: cross-hair detection, grid
// assignment, destination rectification and drop-point computation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "agvlab/delivery.hpp"
#include "agvlab/geometry.hpp"
#include "agvlab/imaging.hpp"

namespace agvlab {

struct MarkerDetection {
  Point2 center;
  double score = 0.0;  ///< [0,1]
};

struct DetectorParams {
  int template_half_size = 12;  ///< window is (2h+1) square
  int arm_half_length = 10;
  int stroke_half_width = 1;  ///< stroke is 2w+1 px wide
  double min_score = 0.6;
  double nms_radius = 8.0;
  std::size_t max_detections = 32;
};

namespace detail {

/// Summed-area tables of intensity and squared intensity.
class IntegralImage {
 public:
  explicit IntegralImage(const GrayImage& img) : w_(img.width() + 1), s_(), q_() {
    const int w = img.width(), h = img.height();
    s_.assign(static_cast<std::size_t>(w + 1) * (h + 1), 0);
    q_.assign(s_.size(), 0);
    for (int y = 0; y < h; ++y) {
      std::int64_t rs = 0, rq = 0;
      for (int x = 0; x < w; ++x) {
        const std::int64_t v = img.at(x, y);
        rs += v;
        rq += v * v;
        s_[idx(x + 1, y + 1)] = s_[idx(x + 1, y)] + rs;
        q_[idx(x + 1, y + 1)] = q_[idx(x + 1, y)] + rq;
      }
    }
  }
  /// Sum over the inclusive rectangle [x0,x1] x [y0,y1].
  std::int64_t sum(int x0, int y0, int x1, int y1) const { return rect(s_, x0, y0, x1, y1); }
  std::int64_t sum_sq(int x0, int y0, int x1, int y1) const { return rect(q_, x0, y0, x1, y1); }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * w_ + x; }
  std::int64_t rect(const std::vector<std::int64_t>& t, int x0, int y0, int x1, int y1) const {
    return t[idx(x1 + 1, y1 + 1)] - t[idx(x0, y1 + 1)] - t[idx(x1 + 1, y0)] + t[idx(x0, y0)];
  }
  int w_;
  std::vector<std::int64_t> s_, q_;
};

}  // namespace detail

/// Normalized cross-correlation against a binary cross template (dark
/// strokes on a light window), negated so a dark cross scores near 1.
/// Returns a score map the size of the image; border pixels score 0.
inline std::vector<double> marker_score_map(const GrayImage& img, const DetectorParams& p = {}) {
  const int w = img.width(), h = img.height(), r = p.template_half_size;
  const int arm = p.arm_half_length, sw = p.stroke_half_width;
  if (arm > r || sw > arm) throw DomainError("template strokes must fit inside the window");
  std::vector<double> score(static_cast<std::size_t>(w) * h, 0.0);
  if (w <= 2 * r + 1 || h <= 2 * r + 1) return score;
  const detail::IntegralImage ii(img);
  const double n = (2.0 * r + 1) * (2.0 * r + 1);
  const double a = 2.0 * (2 * sw + 1) * (2 * arm + 1) - (2.0 * sw + 1) * (2 * sw + 1);
  const double pa = a / n;
  const double t_sd = std::sqrt(pa * (1.0 - pa));
  for (int y = r; y < h - r; ++y)
    for (int x = r; x < w - r; ++x) {
      const double sw_sum = static_cast<double>(ii.sum(x - r, y - r, x + r, y + r));
      const double sq_sum = static_cast<double>(ii.sum_sq(x - r, y - r, x + r, y + r));
      const double mean = sw_sum / n;
      const double var = sq_sum / n - mean * mean;
      if (var < 1e-6) continue;
      const double cross_sum = static_cast<double>(ii.sum(x - sw, y - arm, x + sw, y + arm) +
                                                   ii.sum(x - arm, y - sw, x + arm, y + sw) -
                                                   ii.sum(x - sw, y - sw, x + sw, y + sw));
      const double cov = cross_sum / n - mean * pa;
      score[static_cast<std::size_t>(y) * w + x] = std::clamp(-cov / (std::sqrt(var) * t_sd), 0.0, 1.0);
    }
  return score;
}

inline std::vector<MarkerDetection> detect_markers(const GrayImage& img, const DetectorParams& p = {}) {
  const int w = img.width(), h = img.height();
  const auto score = marker_score_map(img, p);
  auto at = [&](int x, int y) { return score[static_cast<std::size_t>(y) * w + x]; };

  std::vector<MarkerDetection> peaks;
  for (int y = 1; y + 1 < h; ++y)
    for (int x = 1; x + 1 < w; ++x) {
      const double s = at(x, y);
      if (s < p.min_score) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const double o = at(x + dx, y + dy);
          // Plateaus keep their first pixel in scan order.
          if (o > s || (o == s && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      if (!is_max) continue;
      auto offset = [](double l, double c, double r) {
        const double den = l - 2 * c + r;
        return std::abs(den) < 1e-12 ? 0.0 : std::clamp(0.5 * (l - r) / den, -0.5, 0.5);
      };
      peaks.push_back({{x + offset(at(x - 1, y), s, at(x + 1, y)), y + offset(at(x, y - 1), s, at(x, y + 1))}, s});
    }
  std::stable_sort(peaks.begin(), peaks.end(), [](const auto& a, const auto& b) { return a.score > b.score; });

  std::vector<MarkerDetection> kept;
  for (const auto& d : peaks) {
    if (kept.size() >= p.max_detections) break;
    const bool near = std::any_of(kept.begin(), kept.end(),
                                  [&](const auto& k) { return distance(k.center, d.center) <= p.nms_radius; });
    if (!near) kept.push_back(d);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Tiling for a learned detector

struct InferenceTile {
  GrayImage image;  ///< out_size square
  Point2 origin;    ///< source tile top-left, image px
  double scale_x = 1.0;  ///< tile px per image px
  double scale_y = 1.0;

  Point2 to_image(Point2 t) const {
    return {origin.x + (t.x + 0.5) / scale_x - 0.5, origin.y + (t.y + 0.5) / scale_y - 0.5};
  }
  Point2 to_tile(Point2 i) const {
    return {(i.x - origin.x + 0.5) * scale_x - 0.5, (i.y - origin.y + 0.5) * scale_y - 0.5};
  }
};

/// 5 x 2 tiles in row-major order, each resampled to out_size square.
inline std::vector<InferenceTile> segment_for_inference(const GrayImage& img, int out_size = 256) {
  if (img.width() < 10 || img.height() < 10) throw DimensionError("image must be at least 10x10");
  const double tw = static_cast<double>(img.width()) / kGridCols;
  const double th = static_cast<double>(img.height()) / kGridRows;
  std::vector<InferenceTile> tiles;
  for (int j = 0; j < kGridRows; ++j)
    for (int i = 0; i < kGridCols; ++i) {
      InferenceTile t{GrayImage(out_size, out_size), {i * tw, j * th}, out_size / tw, out_size / th};
      for (int v = 0; v < out_size; ++v)
        for (int u = 0; u < out_size; ++u) {
          const Point2 s = t.to_image({static_cast<double>(u), static_cast<double>(v)});
          const double sx = std::clamp(s.x, 0.0, img.width() - 1.0);
          const double sy = std::clamp(s.y, 0.0, img.height() - 1.0);
          t.image.at(u, v) = clamp_u8(bilinear(img, sx, sy));
        }
      tiles.push_back(std::move(t));
    }
  return tiles;
}

// ---------------------------------------------------------------------------
// Grid assignment

/// Expected image directions of the world axes. The grid is symmetric under
/// mirroring and half turns, so detections alone cannot fix its orientation.
struct AssignmentHints {
  bool x_right = true;  ///< world +x points to image +u
  bool y_down = true;   ///< world +y points to image +v
  double inlier_px = 10.0;
};

struct MarkerAssignment {
  std::array<std::optional<Point2>, kGridCols * kGridRows> nodes{};
  Homography world_to_px;
  int detections = 0;

  int assigned() const {
    return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const auto& n) { return n.has_value(); }));
  }
  bool complete() const { return assigned() == kGridCols * kGridRows; }
  bool usable(int k) const {
    if (k < 0 || k >= kDestinations) return false;
    for (auto g : destination_corners(k))
      if (!nodes[MarkerLayout::flat(g)]) return false;
    return true;
  }
  std::vector<GridIndex> missing() const {
    std::vector<GridIndex> out;
    for (std::size_t k = 0; k < nodes.size(); ++k)
      if (!nodes[k]) out.push_back(MarkerLayout::unflat(k));
    return out;
  }
};

namespace detail {

inline int orient(Point2 a, Point2 b, Point2 c) {
  const double v = cross(b - a, c - a);
  return (v > 0) - (v < 0);
}

struct FitScore {
  int inliers = 0;
  double residual = 0.0;
};

inline FitScore score_fit(const Homography& h, const MarkerLayout& layout, const std::vector<MarkerDetection>& dets,
                          double tol) {
  FitScore s;
  for (auto w : layout.points) {
    const Point2 p = h.apply(w);
    double best = tol;
    for (const auto& d : dets) best = std::min(best, distance(p, d.center));
    if (best < tol) {
      ++s.inliers;
      s.residual += best;
    }
  }
  return s;
}

inline bool respects_hints(const Homography& h, Point2 centre, const AssignmentHints& hints) {
  const Point2 o = h.apply(centre);
  const Point2 dx = h.apply(centre + Point2{1, 0}) - o;
  const Point2 dy = h.apply(centre + Point2{0, 1}) - o;
  const double ux = hints.x_right ? dx.x : -dx.x;
  const double vy = hints.y_down ? dy.y : -dy.y;
  return ux > std::abs(dx.y) && vy > std::abs(dy.x);
}

/// Nearest detection for each predicted node, one detection per node.
inline std::array<int, kGridCols * kGridRows> match_nodes(const Homography& h, const MarkerLayout& layout,
                                                          const std::vector<MarkerDetection>& dets, double tol) {
  struct Cand {
    double d;
    int node, det;
  };
  std::vector<Cand> cands;
  for (std::size_t k = 0; k < layout.points.size(); ++k) {
    const Point2 p = h.apply(layout.points[k]);
    for (std::size_t i = 0; i < dets.size(); ++i) {
      const double d = distance(p, dets[i].center);
      if (d < tol) cands.push_back({d, static_cast<int>(k), static_cast<int>(i)});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.d < b.d; });
  std::array<int, kGridCols * kGridRows> out;
  out.fill(-1);
  std::vector<bool> used(dets.size(), false);
  for (const auto& c : cands)
    if (out[static_cast<std::size_t>(c.node)] < 0 && !used[static_cast<std::size_t>(c.det)]) {
      out[static_cast<std::size_t>(c.node)] = c.det;
      used[static_cast<std::size_t>(c.det)] = true;
    }
  return out;
}

}  // namespace detail

/// Fits the grid to the detections: quadruples from the strongest
/// detections are matched against every ordered 4-subset of grid nodes
/// with the same orientation, inliers counted within hints.inlier_px.
inline MarkerAssignment assign_markers(const std::vector<MarkerDetection>& dets_in,
                                       const MarkerLayout& layout = MarkerLayout::standard(),
                                       const AssignmentHints& hints = {}) {
  std::vector<MarkerDetection> dets = dets_in;
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  const int n = static_cast<int>(dets.size());
  if (n < 4) throw AssignmentError("fewer than 4 markers detected", n);

  const int nodes = static_cast<int>(layout.points.size());
  const Point2 centre = (layout.points.front() + layout.points.back()) * 0.5;
  const int flip = (hints.x_right == hints.y_down) ? 1 : -1;
  const int target = std::min(n, nodes);
  const int pool = std::min(n, nodes);

  std::optional<Homography> best;
  detail::FitScore best_score{-1, 0.0};
  std::array<int, 4> q{};
  for (q[0] = 0; q[0] < pool; ++q[0])
    for (q[1] = q[0] + 1; q[1] < pool; ++q[1])
      for (q[2] = q[1] + 1; q[2] < pool; ++q[2])
        for (q[3] = q[2] + 1; q[3] < pool; ++q[3]) {
          if (best_score.inliers == target) goto done;
          std::array<Point2, 4> qp;
          for (int t = 0; t < 4; ++t) qp[t] = dets[static_cast<std::size_t>(q[t])].center;
          double min_area = std::numeric_limits<double>::infinity();
          static constexpr int tri[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
          std::array<int, 4> qo{};
          for (int t = 0; t < 4; ++t) {
            const auto [a, b, c] = tri[t];
            min_area = std::min(min_area, std::abs(cross(qp[b] - qp[a], qp[c] - qp[a])) / 2.0);
            qo[t] = detail::orient(qp[a], qp[b], qp[c]);
          }
          if (min_area < 1000.0) continue;
          for (int a = 0; a < nodes; ++a)
            for (int b = 0; b < nodes; ++b)
              for (int c = 0; c < nodes; ++c)
                for (int d = 0; d < nodes; ++d) {
                  if (a == b || a == c || a == d || b == c || b == d || c == d) continue;
                  const std::array<Point2, 4> wp{layout.points[static_cast<std::size_t>(a)],
                                                 layout.points[static_cast<std::size_t>(b)],
                                                 layout.points[static_cast<std::size_t>(c)],
                                                 layout.points[static_cast<std::size_t>(d)]};
                  bool same = true;
                  for (int t = 0; t < 4 && same; ++t) {
                    const auto [i, j, k] = tri[t];
                    same = detail::orient(wp[i], wp[j], wp[k]) * flip == qo[t];
                  }
                  if (!same) continue;
                  Homography h;
                  try {
                    h = homography_from_points(wp, qp);
                  } catch (const DegeneracyError&) {
                    continue;
                  }
                  if (!detail::respects_hints(h, centre, hints)) continue;
                  const auto s = detail::score_fit(h, layout, dets, hints.inlier_px);
                  if (s.inliers > best_score.inliers ||
                      (s.inliers == best_score.inliers && s.residual < best_score.residual)) {
                    best_score = s;
                    best = h;
                  }
                }
        }
done:
  if (!best || best_score.inliers < 4) throw AssignmentError("no consistent marker grid fit", n);

  // Least-squares refit on all matched nodes, then the final matching.
  Homography h = *best;
  for (int iter = 0; iter < 2; ++iter) {
    const auto m = detail::match_nodes(h, layout, dets, hints.inlier_px);
    std::vector<Point2> src, dst;
    for (std::size_t k = 0; k < m.size(); ++k)
      if (m[k] >= 0) {
        src.push_back(layout.points[k]);
        dst.push_back(dets[static_cast<std::size_t>(m[k])].center);
      }
    if (src.size() < 4) break;
    try {
      h = homography_fit(src, dst);
    } catch (const DegeneracyError&) {
      break;
    }
  }
  MarkerAssignment out;
  out.world_to_px = h;
  out.detections = n;
  const auto m = detail::match_nodes(h, layout, dets, hints.inlier_px);
  for (std::size_t k = 0; k < m.size(); ++k)
    if (m[k] >= 0) out.nodes[k] = dets[static_cast<std::size_t>(m[k])].center;
  return out;
}

// ---------------------------------------------------------------------------
// Destinations and drop areas

/// Image px -> canonical tile px for destination k, from its four markers.
inline Homography destination_homography(const MarkerAssignment& asg, int k) {
  if (k < 0 || k >= kDestinations) throw ContractError("destination index must be 0..3");
  if (!asg.usable(k)) throw IsolationError("destination " + std::to_string(k) + " lacks corner markers");
  const auto corners = destination_corners(k);
  std::array<Point2, 4> src, dst;
  const double t = kTilePx;
  const std::array<Point2, 4> canon{Point2{0, 0}, {t, 0}, {t, t}, {0, t}};
  for (int c = 0; c < 4; ++c) {
    src[static_cast<std::size_t>(c)] = *asg.nodes[MarkerLayout::flat(corners[static_cast<std::size_t>(c)])];
    dst[static_cast<std::size_t>(c)] = canon[static_cast<std::size_t>(c)];
  }
  try {
    return homography_from_points(src, dst);
  } catch (const DegeneracyError&) {
    throw IsolationError("destination " + std::to_string(k) + " corner markers are degenerate");
  }
}

inline GrayImage isolate_destination(const GrayImage& img, const MarkerAssignment& asg, int k) {
  return warp_image(img, destination_homography(asg, k), kTilePx, kTilePx);
}

struct ExtractParams {
  int border_px = 12;
  double min_contrast = 40.0;  ///< class-mean separation below this means no drop area
  double epsilon = 2.0;
};

/// Drop-area outline in tile px (1 px = 1 mm inside the destination).
inline Polygon extract_drop_polygon(const GrayImage& tile, const ExtractParams& p = {}) {
  const auto seg = segment_otsu(tile);
  // A tile of bare floor has only noise to split.
  double s0 = 0, s1 = 0, n0 = 0, n1 = 0;
  for (int y = p.border_px; y < tile.height() - p.border_px; ++y)
    for (int x = p.border_px; x < tile.width() - p.border_px; ++x) {
      const double v = tile.at(x, y);
      if (v <= seg.threshold) {
        s0 += v;
        ++n0;
      } else {
        s1 += v;
        ++n1;
      }
    }
  if (n0 == 0 || n1 == 0 || s1 / n1 - s0 / n0 < p.min_contrast) throw ExtractionError(0);

  BinaryImage mask = morph_open(seg.out);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (x < p.border_px || y < p.border_px || x >= mask.width() - p.border_px || y >= mask.height() - p.border_px)
        mask.at(x, y) = 0;
  return polygon_from_mask(mask, p.epsilon);
}

struct DeliveryOptions {
  DetectorParams detector;
  AssignmentHints hints;
  ExtractParams extract;
  std::optional<int> destination_override;
  double precision_mm = 1.0;
};

struct DeliveryResult {
  DeliveryInfo info;
  Polygon polygon_mm;  ///< drop area in world mm
  MarkerAssignment assignment;
};

/// Full pipeline on an overhead frame.
inline DeliveryResult compute_delivery_detail(const GrayImage& img, const DeliveryOptions& opt = {}) {
  const auto dets = detect_markers(img, opt.detector);
  const MarkerAssignment asg = assign_markers(dets, MarkerLayout::standard(), opt.hints);
  if (opt.destination_override && (*opt.destination_override < 0 || *opt.destination_override >= kDestinations))
    throw DomainError("destination override must be 0..3");

  std::vector<int> usable, found;
  std::array<std::optional<Polygon>, kDestinations> polys;
  std::array<int, kDestinations> components{};
  for (int k = 0; k < kDestinations; ++k) {
    if (!asg.usable(k)) continue;
    usable.push_back(k);
    try {
      polys[static_cast<std::size_t>(k)] = extract_drop_polygon(isolate_destination(img, asg, k), opt.extract);
      found.push_back(k);
    } catch (const ExtractionError& e) {
      components[static_cast<std::size_t>(k)] = e.components();
      if (e.components() > 0) found.push_back(k);
    }
  }
  if (usable.empty()) throw AssignmentError("no destination has all four corner markers", asg.assigned());

  int dest = -1;
  if (opt.destination_override) {
    dest = *opt.destination_override;
    if (std::find(found.begin(), found.end(), dest) == found.end())
      throw NoJobError("no drop area in destination " + std::to_string(dest));
  } else {
    if (found.empty()) throw NoJobError("no drop area in any destination");
    if (found.size() > 1) throw AmbiguityError(found);
    dest = found.front();
  }
  const auto& poly = polys[static_cast<std::size_t>(dest)];
  if (!poly) throw ExtractionError(components[static_cast<std::size_t>(dest)]);

  const DropPoint pole = polylabel(*poly, opt.precision_mm);
  const Point2 w = px_to_world({pole.x, pole.y}, dest);
  DeliveryResult r;
  r.info = {dest, w.x, w.y, pole.radius * kMmPerTilePx, asg.assigned()};
  for (auto v : poly->vertices) r.polygon_mm.vertices.push_back(px_to_world(v, dest));
  r.assignment = asg;
  return r;
}

inline DeliveryInfo compute_delivery(const GrayImage& img, const DeliveryOptions& opt = {}) {
  return compute_delivery_detail(img, opt).info;
}

}  // namespace agvlab
