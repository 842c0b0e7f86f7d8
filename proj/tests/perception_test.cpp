#include <gtest/gtest.h>

#include <random>

#include "agvlab/perception.hpp"
#include "agvlab/simworld.hpp"
#include "oracles.hpp"

using namespace agvlab;

namespace {

SceneSpec clean_scene() {
  SceneSpec s = default_scene();
  s.lighting.noise_sigma = 0;
  s.lighting.vignette = 0;
  return s;
}

Polygon square_mm(double cx, double cy, double half) {
  return Polygon{{{cx - half, cy - half}, {cx + half, cy - half}, {cx + half, cy + half}, {cx - half, cy + half}}};
}

Polygon l_shape_mm(Point2 origin, double s, double t) {
  Polygon p{{{0, 0}, {s, 0}, {s, t}, {t, t}, {t, s}, {0, s}}};
  for (auto& v : p.vertices) v = v + origin;
  return p;
}

void draw_cross(GrayImage& img, int cx, int cy) {
  for (int d = -10; d <= 10; ++d)
    for (int w = -1; w <= 1; ++w) {
      img.at(cx + w, cy + d) = 20;
      img.at(cx + d, cy + w) = 20;
    }
}

std::vector<MarkerDetection> truth_detections(const OverheadRender& r) {
  std::vector<MarkerDetection> out;
  for (const auto& m : r.marker_px)
    if (m) out.push_back({*m, 0.9});
  return out;
}

}  // namespace

TEST(DetectMarkers, BlankImageIsEmpty) {
  EXPECT_TRUE(detect_markers(GrayImage(200, 100, 220)).empty());
  EXPECT_TRUE(detect_markers(GrayImage(10, 10, 0)).empty());
}

TEST(DetectMarkers, FindsRenderedGrid) {
  for (double tilt : {0.0, 7.0}) {
    SceneSpec s = default_scene();
    s.camera.tilt_x_deg = tilt;
    s.camera.tilt_y_deg = -tilt / 2;
    s.camera.scale = 0.9;
    s.camera.height = 512;
    const auto r = render_overhead(s);
    const auto dets = detect_markers(r.image);
    ASSERT_EQ(dets.size(), 10u);
    for (const auto& m : r.marker_px) {
      double best = 1e9;
      for (const auto& d : dets) best = std::min(best, distance(d.center, *m));
      EXPECT_LT(best, 2.0);
    }
    for (std::size_t i = 1; i < dets.size(); ++i) EXPECT_GE(dets[i - 1].score, dets[i].score);
    for (const auto& d : dets) {
      EXPECT_GE(d.score, 0.0);
      EXPECT_LE(d.score, 1.0);
    }
  }
}

TEST(DetectMarkers, JitteredDuplicateCollapses) {
  GrayImage img(80, 80, 220);
  draw_cross(img, 40, 40);
  draw_cross(img, 41, 40);
  const auto dets = detect_markers(img);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_NEAR(dets[0].center.x, 40.5, 1.0);
  EXPECT_NEAR(dets[0].center.y, 40.0, 1.0);
}

TEST(DetectMarkers, ScoreMatchesDirectCorrelation) {
  std::mt19937 rng(6);
  std::uniform_int_distribution<int> v(0, 255);
  GrayImage img(40, 40);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(v(rng));
  const auto map = marker_score_map(img);
  // Direct Pearson correlation against the explicit template.
  for (auto [x, y] : {std::pair{12, 12}, {20, 17}, {27, 27}}) {
    double si = 0, st = 0, sii = 0, stt = 0, sit = 0, n = 0;
    for (int dy = -12; dy <= 12; ++dy)
      for (int dx = -12; dx <= 12; ++dx) {
        const double t = ((std::abs(dx) <= 1 && std::abs(dy) <= 10) || (std::abs(dy) <= 1 && std::abs(dx) <= 10)) ? 1 : 0;
        const double i = img.at(x + dx, y + dy);
        si += i, st += t, sii += i * i, stt += t * t, sit += i * t, ++n;
      }
    const double cov = sit / n - si / n * st / n;
    const double r = cov / std::sqrt((sii / n - si * si / n / n) * (stt / n - st * st / n / n));
    EXPECT_NEAR(map[static_cast<std::size_t>(y) * 40 + x], std::clamp(-r, 0.0, 1.0), 1e-9);
  }
}

TEST(SegmentForInference, ExactAndScaledTiling) {
  GrayImage img(1280, 512);
  for (int y = 0; y < 512; ++y)
    for (int x = 0; x < 1280; ++x) img.at(x, y) = static_cast<std::uint8_t>((x * 7 + y * 13) % 256);
  const auto tiles = segment_for_inference(img);
  ASSERT_EQ(tiles.size(), 10u);
  const auto& t7 = tiles[7];  // column 2, row 1
  EXPECT_EQ(t7.origin.x, 512);
  EXPECT_EQ(t7.origin.y, 256);
  EXPECT_EQ(t7.scale_x, 1.0);
  for (int v = 0; v < 256; v += 17)
    for (int u = 0; u < 256; u += 13) EXPECT_EQ(t7.image.at(u, v), img.at(512 + u, 256 + v));

  const auto small = segment_for_inference(GrayImage(1000, 400, 9));
  EXPECT_DOUBLE_EQ(small[0].scale_x, 1.28);
  EXPECT_DOUBLE_EQ(small[0].scale_y, 1.28);
  EXPECT_EQ(small[6].origin.x, 200);
  EXPECT_EQ(small[6].image.width(), 256);

  std::mt19937 rng(2);
  std::uniform_real_distribution<double> ux(0, 999), uy(0, 399);
  for (int i = 0; i < 500; ++i) {
    const Point2 p{std::round(ux(rng)), std::round(uy(rng))};
    const auto& t = small[static_cast<std::size_t>(std::min(4, static_cast<int>(p.x / 200)) +
                                                   5 * std::min(1, static_cast<int>(p.y / 200)))];
    const Point2 q = t.to_tile(p);
    const Point2 back = t.to_image({std::round(q.x), std::round(q.y)});
    // Rounding acts per axis.
    EXPECT_LT(std::max(std::abs(back.x - p.x), std::abs(back.y - p.y)), 0.51);
  }
  EXPECT_THROW(segment_for_inference(GrayImage(9, 40)), DimensionError);
}

TEST(AssignMarkers, CompleteFromGroundTruth) {
  const auto r = render_overhead(clean_scene());
  const auto asg = assign_markers(truth_detections(r));
  EXPECT_TRUE(asg.complete());
  for (std::size_t k = 0; k < 10; ++k) EXPECT_LT(distance(*asg.nodes[k], *r.marker_px[k]), 1e-6);
  for (int k = 0; k < 4; ++k) EXPECT_TRUE(asg.usable(k));
}

TEST(AssignMarkers, OneOccludedMarker) {
  const auto r = render_overhead(clean_scene());
  auto dets = truth_detections(r);
  dets.erase(dets.begin() + 9);  // node (4,1)
  const auto asg = assign_markers(dets);
  EXPECT_FALSE(asg.complete());
  EXPECT_EQ(asg.assigned(), 9);
  ASSERT_EQ(asg.missing().size(), 1u);
  EXPECT_EQ(asg.missing()[0], (GridIndex{4, 1}));
  EXPECT_TRUE(asg.usable(0) && asg.usable(1) && asg.usable(2));
  EXPECT_FALSE(asg.usable(3));
}

TEST(AssignMarkers, TooFewDetections) {
  const auto r = render_overhead(clean_scene());
  auto dets = truth_detections(r);
  dets.resize(3);
  try {
    assign_markers(dets);
    FAIL() << "expected AssignmentError";
  } catch (const AssignmentError& e) {
    EXPECT_EQ(e.markers_detected(), 3);
  }
}

TEST(AssignMarkers, OrientationHintsAndOutliers) {
  SceneSpec s = clean_scene();
  s.camera.tilt_x_deg = 6;
  s.camera.yaw_deg = 4;
  const auto r = render_overhead(s);
  auto dets = truth_detections(r);
  // Strong spurious responses and a collinear top-row start.
  dets.insert(dets.begin(), {{{30, 30}, 0.99}, {{1250, 470}, 0.98}});
  const auto asg = assign_markers(dets);
  EXPECT_TRUE(asg.complete());
  for (std::size_t k = 0; k < 10; ++k) EXPECT_LT(distance(*asg.nodes[k], *r.marker_px[k]), 1e-6);

  // Mirrored hints pick the mirrored grid.
  const auto flipped = assign_markers(truth_detections(r), MarkerLayout::standard(), {false, true, 10.0});
  EXPECT_LT(distance(*flipped.nodes[0], *r.marker_px[4]), 1e-6);
}

TEST(IsolateDestination, MatchesDirectTileRender) {
  SceneSpec s = clean_scene();
  s.drop_zones = {{1, l_shape_mm({330, 60}, 160, 70)}};
  const auto r = render_overhead(s);
  const auto asg = assign_markers(detect_markers(r.image));
  for (int k : {0, 1, 3}) {
    const GrayImage tile = isolate_destination(r.image, asg, k);
    const GrayImage ref = render_destination_tile(s, k);
    double diff = 0;
    for (std::size_t i = 0; i < tile.size(); ++i) diff += std::abs(tile.pixels()[i] - ref.pixels()[i]);
    EXPECT_LE(diff / static_cast<double>(tile.size()), 3.0) << "destination " << k;
  }
  EXPECT_THROW(isolate_destination(r.image, asg, 5), ContractError);
  EXPECT_THROW(isolate_destination(r.image, asg, -1), ContractError);
}

TEST(IsolateDestination, PerspectiveCornersLandOnTileCorners) {
  SceneSpec s = default_scene();
  s.camera.tilt_x_deg = -9;
  s.camera.tilt_y_deg = 8;
  s.camera.yaw_deg = 3;
  s.camera.scale = 0.9;
  s.camera.height = 512;
  const auto r = render_overhead(s);
  const auto asg = assign_markers(detect_markers(r.image));
  ASSERT_TRUE(asg.complete());
  const double t = kTilePx;
  const std::array<Point2, 4> canon{Point2{0, 0}, {t, 0}, {t, t}, {0, t}};
  for (int k = 0; k < 4; ++k) {
    const Homography h = destination_homography(asg, k);
    const auto corners = destination_corners(k);
    for (int c = 0; c < 4; ++c) {
      const Point2 gt = *r.marker_px[MarkerLayout::flat(corners[static_cast<std::size_t>(c)])];
      EXPECT_LT(distance(h.apply(gt), canon[static_cast<std::size_t>(c)]), 1.0);
    }
  }
  MarkerAssignment partial = asg;
  partial.nodes[0].reset();
  EXPECT_THROW(isolate_destination(r.image, partial, 0), IsolationError);
}

TEST(ExtractDropPolygon, CentredSquare) {
  GrayImage tile(280, 280, 220);
  for (int y = 90; y < 190; ++y)
    for (int x = 90; x < 190; ++x) tile.at(x, y) = 30;
  const Polygon p = extract_drop_polygon(tile);
  ASSERT_EQ(p.vertices.size(), 4u);
  EXPECT_GT(signed_area(p), 0);
  for (auto v : p.vertices) {
    EXPECT_NEAR(std::min(std::abs(v.x - 90), std::abs(v.x - 189)), 0, 1.0);
    EXPECT_NEAR(std::min(std::abs(v.y - 90), std::abs(v.y - 189)), 0, 1.0);
  }
}

TEST(ExtractDropPolygon, BlankTileHasNoComponents) {
  SceneSpec s = default_scene();
  for (int k = 0; k < 4; ++k) {
    try {
      extract_drop_polygon(render_destination_tile(s, k));
      FAIL() << "expected ExtractionError";
    } catch (const ExtractionError& e) {
      EXPECT_EQ(e.components(), 0);
    }
  }
  EXPECT_THROW(extract_drop_polygon(GrayImage(280, 280, 220)), ExtractionError);
}

TEST(ExtractDropPolygon, LShapeCovered) {
  SceneSpec s = default_scene();
  const Polygon l = l_shape_mm({50, 40}, 180, 70);
  s.drop_zones = {{0, l}};
  const Polygon p = extract_drop_polygon(render_destination_tile(s, 0));
  EXPECT_GE(p.vertices.size(), 5u);
  EXPECT_LE(p.vertices.size(), 7u);
  EXPECT_TRUE(is_simple(p));
  // Within a couple of px of the true outline, area close to the truth.
  for (auto v : p.vertices) EXPECT_LT(std::abs(oracle::min_edge_distance(v, l.vertices)), 2.5);
  EXPECT_NEAR(signed_area(p), signed_area(l), 0.05 * signed_area(l));
}

TEST(ComputeDelivery, LShapeInDestinationTwo) {
  SceneSpec s = default_scene();
  const Polygon l = l_shape_mm({600, 50}, 170, 75);
  s.drop_zones = {{2, l}};
  const auto r = render_overhead(s);
  const DeliveryInfo d = compute_delivery(r.image);
  EXPECT_EQ(d.destination, 2);
  EXPECT_EQ(d.markers_detected, 10);
  const auto pole = oracle::pole_grid_search(l, 0.25);
  EXPECT_LT(distance({d.drop_x_mm, d.drop_y_mm}, pole.point), 5.0);
  EXPECT_NEAR(d.clearance_mm, pole.radius, 3.0);
  EXPECT_TRUE(inside_destination({d.drop_x_mm, d.drop_y_mm}, 2));
}

TEST(ComputeDelivery, NoShapesMeansNoJob) {
  EXPECT_THROW(compute_delivery(render_overhead(default_scene()).image), NoJobError);
}

TEST(ComputeDelivery, TwoShapesAreAmbiguous) {
  SceneSpec s = default_scene();
  s.drop_zones = {{1, square_mm(420, 140, 50)}, {3, square_mm(980, 150, 60)}};
  const auto img = render_overhead(s).image;
  try {
    compute_delivery(img);
    FAIL() << "expected AmbiguityError";
  } catch (const AmbiguityError& e) {
    EXPECT_EQ(e.destinations(), (std::vector<int>{1, 3}));
  }
  DeliveryOptions opt;
  opt.destination_override = 3;
  const auto d = compute_delivery(img, opt);
  EXPECT_EQ(d.destination, 3);
  EXPECT_NEAR(d.drop_x_mm, 980, 2.0);
  EXPECT_NEAR(d.drop_y_mm, 150, 2.0);
  opt.destination_override = 0;
  EXPECT_THROW(compute_delivery(img, opt), NoJobError);
}

TEST(ComputeDelivery, OccludedMarkersAreInsufficient) {
  SceneSpec s = default_scene();
  s.drop_zones = {{1, square_mm(420, 140, 50)}};
  s.hidden_markers = {0, 1, 2, 3, 4, 5, 6, 7};
  try {
    compute_delivery(render_overhead(s).image);
    FAIL() << "expected AssignmentError";
  } catch (const AssignmentError& e) {
    EXPECT_EQ(e.markers_detected(), 2);
  }
}

TEST(ComputeDelivery, DeterministicForSameBytes) {
  const SceneSpec s = random_scene(77);
  const auto img = render_overhead(s).image;
  EXPECT_EQ(compute_delivery(img), compute_delivery(img));
}

TEST(ComputeDelivery, RandomScenesNearGroundTruthPole) {
  int good = 0;
  const int n = 30;
  for (int i = 0; i < n; ++i) {
    const SceneSpec s = random_scene(5000 + static_cast<std::uint64_t>(i));
    const auto& zone = s.drop_zones.at(0);
    const auto d = compute_delivery(render_overhead(s).image);
    EXPECT_EQ(d.destination, zone.destination);
    EXPECT_TRUE(inside_destination({d.drop_x_mm, d.drop_y_mm}, zone.destination));
    const auto pole = oracle::pole_grid_search(zone.polygon, 0.5);
    if (distance({d.drop_x_mm, d.drop_y_mm}, pole.point) < 5.0) ++good;
  }
  EXPECT_GE(good, n * 95 / 100);
}

TEST(DeliveryJson, RoundTripAndStrictness) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1120);
  for (int i = 0; i < 1000; ++i) {
    const DeliveryInfo d{static_cast<int>(i % 4), u(rng), u(rng) / 4, u(rng) / 10, static_cast<int>(i % 11)};
    std::string ts;
    const auto back = delivery_from_json(nlohmann::json::parse(delivery_to_json(d, "2026-01-01T00:00:00Z").dump()), &ts);
    EXPECT_EQ(back, d);
    EXPECT_EQ(ts, "2026-01-01T00:00:00Z");
  }
  auto j = delivery_to_json({}, utc_timestamp());
  j["extra"] = 1;
  EXPECT_THROW(delivery_from_json(j), ParseError);
  j = delivery_to_json({}, utc_timestamp());
  j["destination"] = 4;
  EXPECT_THROW(delivery_from_json(j), ParseError);
  j = delivery_to_json({}, utc_timestamp());
  j["drop_point_mm"].erase("y");
  EXPECT_THROW(delivery_from_json(j), ParseError);
  EXPECT_EQ(utc_timestamp(std::chrono::system_clock::time_point{}), "1970-01-01T00:00:00Z");
}
