#pragma once

// Deterministic stand-in for the physical rig: scene model, kinematics,
// synthetic cameras and the planar arm.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "agvlab/delivery.hpp"
#include "agvlab/geometry.hpp"
#include "agvlab/navigation.hpp"
#include "json.hpp"

namespace agvlab {

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;  ///< radians, counterclockwise from +x
};

struct DropZone {
  int destination = 0;
  Polygon polygon;  ///< world mm
};

struct Lighting {
  double gain = 1.0;
  double vignette = 0.1;  ///< fractional darkening at the frame corners
  double noise_sigma = 3.0;
};

/// Pinhole camera above the destination grid, looking down with optional
/// tilt. `scale` is px per mm at zero tilt.
struct OverheadCamera {
  int width = 1280;
  int height = 480;
  double scale = 1.0;
  double height_mm = 1500.0;
  double tilt_x_deg = 0.0;
  double tilt_y_deg = 0.0;
  double yaw_deg = 0.0;
};

struct ArmGeometry {
  double l1 = 250.0;
  double l2 = 250.0;
};

struct SceneSpec {
  int version = 1;
  std::uint64_t seed = 7;
  TrackTopology track;
  double stroke_width_mm = 18.0;
  MarkerLayout markers = MarkerLayout::standard();
  std::vector<int> hidden_markers;  ///< flat grid indices not drawn
  std::vector<DropZone> drop_zones;
  Lighting lighting;
  OverheadCamera camera;
  ArmGeometry arm;
  Pose2D start;
};

// Intensities of the synthetic world.
inline constexpr double kFloor = 220.0;
inline constexpr double kTape = 30.0;
inline constexpr double kPaper = 30.0;
inline constexpr double kMarkerInk = 20.0;
inline constexpr double kOutline = 205.0;
inline constexpr double kMarkerArmMm = 10.0;    ///< half length of each stroke
inline constexpr double kMarkerStrokeMm = 3.0;

/// Two-level fan-out: the trunk splits at J1, each side again at J2L/J2R,
/// and each of the four branches ends 80 mm in front of its destination.
inline TrackTopology default_track() {
  TrackTopology t;
  auto add = [&](std::string id, double x, double y, NodeKind k, int dest = -1) {
    t.nodes.push_back({std::move(id), {x, y}, k, dest});
  };
  add("S", 560, -720, NodeKind::Source);
  add("J1", 560, -480, NodeKind::Junction);
  add("CL", 280, -480, NodeKind::Corner);
  add("CR", 840, -480, NodeKind::Corner);
  add("J2L", 280, -280, NodeKind::Junction);
  add("J2R", 840, -280, NodeKind::Junction);
  const double xs[4] = {140, 420, 700, 980};
  for (int k = 0; k < 4; ++k) {
    add("C" + std::to_string(k), xs[k], -280, NodeKind::Corner);
    add("D" + std::to_string(k), xs[k], -80, NodeKind::Terminal, k);
  }
  auto link = [&](const std::string& a, const std::string& b) { t.edges.emplace_back(t.find(a), t.find(b)); };
  link("S", "J1");
  link("J1", "CL");
  link("J1", "CR");
  link("CL", "J2L");
  link("CR", "J2R");
  link("J2L", "C0");
  link("J2L", "C1");
  link("J2R", "C2");
  link("J2R", "C3");
  for (int k = 0; k < 4; ++k) link("C" + std::to_string(k), "D" + std::to_string(k));
  return t;
}

inline SceneSpec default_scene() {
  SceneSpec s;
  s.track = default_track();
  s.start = {560, -650, -std::numbers::pi / 2.0};  // facing the source terminal
  return s;
}

// ---------------------------------------------------------------------------
// Validation and JSON

inline std::vector<std::string> validate_scene(const SceneSpec& s) {
  std::vector<std::string> problems;
  if (s.version != 1) problems.push_back("unsupported scene_version");
  if (s.track.source() < 0) problems.push_back("track has no source");
  for (int k = 0; k < kDestinations; ++k)
    if (s.track.terminal_for(k) < 0) problems.push_back("missing terminal for destination " + std::to_string(k));
  for (auto [a, b] : s.track.edges)
    if (a < 0 || b < 0 || a >= static_cast<int>(s.track.nodes.size()) ||
        b >= static_cast<int>(s.track.nodes.size()) || a == b)
      problems.push_back("track edge references an unknown node");
  if (!(s.stroke_width_mm > 0)) problems.push_back("stroke width must be positive");
  for (int h : s.hidden_markers)
    if (h < 0 || h >= kGridCols * kGridRows) problems.push_back("hidden marker index out of range");
  for (const auto& z : s.drop_zones) {
    if (z.destination < 0 || z.destination >= kDestinations) {
      problems.push_back("drop zone destination out of range");
      continue;
    }
    if (!is_simple(z.polygon)) problems.push_back("drop zone polygon is not simple");
    for (auto p : z.polygon.vertices)
      if (!inside_destination(p, z.destination)) {
        problems.push_back("drop zone leaves destination " + std::to_string(z.destination));
        break;
      }
  }
  if (s.camera.width <= 0 || s.camera.height <= 0 || !(s.camera.scale > 0) || !(s.camera.height_mm > 0))
    problems.push_back("overhead camera parameters out of range");
  if (!(s.arm.l1 > 0) || !(s.arm.l2 > 0)) problems.push_back("arm links must be positive");
  return problems;
}

inline NodeKind node_kind_from_string(const std::string& k) {
  if (k == "source") return NodeKind::Source;
  if (k == "junction") return NodeKind::Junction;
  if (k == "corner") return NodeKind::Corner;
  if (k == "terminal") return NodeKind::Terminal;
  throw ParseError("unknown node kind '" + k + "'");
}

inline nlohmann::json scene_to_json(const SceneSpec& s) {
  using nlohmann::json;
  json nodes = json::array();
  for (const auto& n : s.track.nodes) {
    json j{{"id", n.id}, {"x", n.pos.x}, {"y", n.pos.y}, {"kind", to_string(n.kind)}};
    if (n.kind == NodeKind::Terminal) j["destination"] = n.destination;
    nodes.push_back(j);
  }
  json edges = json::array();
  for (auto [a, b] : s.track.edges)
    edges.push_back({s.track.nodes[static_cast<std::size_t>(a)].id, s.track.nodes[static_cast<std::size_t>(b)].id});
  json zones = json::array();
  for (const auto& z : s.drop_zones)
    zones.push_back({{"destination", z.destination}, {"polygon", polygon_to_json(z.polygon)}});
  return json{
      {"scene_version", s.version},
      {"seed", s.seed},
      {"track", {{"stroke_width_mm", s.stroke_width_mm}, {"nodes", nodes}, {"edges", edges}}},
      {"markers", {{"cell_mm", kCellMm}, {"hidden", s.hidden_markers}}},
      {"drop_zones", zones},
      {"lighting", {{"gain", s.lighting.gain}, {"vignette", s.lighting.vignette}, {"noise_sigma", s.lighting.noise_sigma}}},
      {"overhead_camera",
       {{"width", s.camera.width},
        {"height", s.camera.height},
        {"scale_px_per_mm", s.camera.scale},
        {"height_mm", s.camera.height_mm},
        {"tilt_x_deg", s.camera.tilt_x_deg},
        {"tilt_y_deg", s.camera.tilt_y_deg},
        {"yaw_deg", s.camera.yaw_deg}}},
      {"arm", {{"l1_mm", s.arm.l1}, {"l2_mm", s.arm.l2}}},
      {"start_pose", {{"x", s.start.x}, {"y", s.start.y}, {"heading_deg", s.start.heading * 180.0 / std::numbers::pi}}},
  };
}

/// Parses a scene document. Absent optional sections keep their defaults;
/// the track defaults to the standard fan-out.
inline SceneSpec scene_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) throw ParseError("scene must be a JSON object");
    static const std::array<const char*, 9> known{"scene_version", "seed", "track", "markers", "drop_zones",
                                                  "lighting", "overhead_camera", "arm", "start_pose"};
    for (const auto& [k, v] : j.items())
      if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; }))
        throw ParseError("unknown scene key '" + k + "'");
    SceneSpec s = default_scene();
    s.version = j.at("scene_version").get<int>();
    if (s.version != 1) throw ParseError("unsupported scene_version " + std::to_string(s.version));
    s.seed = j.value("seed", s.seed);
    if (j.contains("track")) {
      const auto& t = j.at("track");
      s.stroke_width_mm = t.value("stroke_width_mm", s.stroke_width_mm);
      TrackTopology topo;
      for (const auto& n : t.at("nodes")) {
        TrackNode node{n.at("id").get<std::string>(),
                       {n.at("x").get<double>(), n.at("y").get<double>()},
                       node_kind_from_string(n.at("kind").get<std::string>()),
                       n.value("destination", -1)};
        topo.nodes.push_back(node);
      }
      for (const auto& e : t.at("edges")) {
        const int a = topo.find(e.at(0).get<std::string>());
        const int b = topo.find(e.at(1).get<std::string>());
        if (a < 0 || b < 0) throw ParseError("track edge references an unknown node");
        topo.edges.emplace_back(a, b);
      }
      s.track = std::move(topo);
    }
    if (j.contains("markers")) s.hidden_markers = j.at("markers").value("hidden", std::vector<int>{});
    if (j.contains("drop_zones"))
      for (const auto& z : j.at("drop_zones"))
        s.drop_zones.push_back({z.at("destination").get<int>(), polygon_from_json(z.at("polygon"))});
    if (j.contains("lighting")) {
      const auto& l = j.at("lighting");
      s.lighting.gain = l.value("gain", s.lighting.gain);
      s.lighting.vignette = l.value("vignette", s.lighting.vignette);
      s.lighting.noise_sigma = l.value("noise_sigma", s.lighting.noise_sigma);
    }
    if (j.contains("overhead_camera")) {
      const auto& c = j.at("overhead_camera");
      s.camera.width = c.value("width", s.camera.width);
      s.camera.height = c.value("height", s.camera.height);
      s.camera.scale = c.value("scale_px_per_mm", s.camera.scale);
      s.camera.height_mm = c.value("height_mm", s.camera.height_mm);
      s.camera.tilt_x_deg = c.value("tilt_x_deg", s.camera.tilt_x_deg);
      s.camera.tilt_y_deg = c.value("tilt_y_deg", s.camera.tilt_y_deg);
      s.camera.yaw_deg = c.value("yaw_deg", s.camera.yaw_deg);
    }
    if (j.contains("arm")) {
      s.arm.l1 = j.at("arm").value("l1_mm", s.arm.l1);
      s.arm.l2 = j.at("arm").value("l2_mm", s.arm.l2);
    }
    if (j.contains("start_pose")) {
      const auto& p = j.at("start_pose");
      s.start = {p.at("x").get<double>(), p.at("y").get<double>(),
                 p.at("heading_deg").get<double>() * std::numbers::pi / 180.0};
    }
    const auto problems = validate_scene(s);
    if (!problems.empty()) throw ParseError("invalid scene: " + problems.front());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid scene: ") + e.what());
  }
}

inline SceneSpec load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scene file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scene file is not valid JSON: ") + e.what());
  }
  return scene_from_json(j);
}

// ---------------------------------------------------------------------------
// Kinematics

/// Exact arc integration of a differential drive over `dt` seconds.
inline Pose2D step_diff_drive(const Pose2D& p, const WheelSpeeds& w, double wheelbase, double dt) {
  if (!(dt > 0.0)) throw DomainError("dt must be positive");
  const double v = (w.left + w.right) / 2.0;
  const double omega = (w.right - w.left) / wheelbase;
  if (std::abs(omega) < 1e-9)
    return {p.x + v * dt * std::cos(p.heading), p.y + v * dt * std::sin(p.heading), p.heading};
  const double r = v / omega;
  const double h1 = p.heading + omega * dt;
  return {p.x + r * (std::sin(h1) - std::sin(p.heading)), p.y - r * (std::cos(h1) - std::cos(p.heading)),
          std::remainder(h1, 2.0 * std::numbers::pi)};
}

struct ArmAngles {
  double shoulder = 0.0;
  double elbow = 0.0;
};

inline constexpr double kArmJointLimit = 150.0 * std::numbers::pi / 180.0;

inline Point2 arm_fk(const ArmAngles& a, double l1, double l2) {
  return {l1 * std::cos(a.shoulder) + l2 * std::cos(a.shoulder + a.elbow),
          l1 * std::sin(a.shoulder) + l2 * std::sin(a.shoulder + a.elbow)};
}

/// Two-link planar inverse kinematics, elbow-down branch (elbow >= 0).
/// Empty when the target is outside the annulus [|l1-l2|, l1+l2] or the
/// solution violates the +/-150 degree joint limits.
inline std::optional<ArmAngles> arm_ik_2link(Point2 target, double l1, double l2) {
  const double r2 = target.x * target.x + target.y * target.y;
  const double r = std::sqrt(r2);
  if (r > l1 + l2 + 1e-12 || r < std::abs(l1 - l2) - 1e-12) return std::nullopt;
  const double c2 = std::clamp((r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2), -1.0, 1.0);
  const double elbow = std::acos(c2);
  const double shoulder =
      std::atan2(target.y, target.x) - std::atan2(l2 * std::sin(elbow), l1 + l2 * std::cos(elbow));
  const ArmAngles a{std::remainder(shoulder, 2.0 * std::numbers::pi), elbow};
  if (std::abs(a.shoulder) > kArmJointLimit || std::abs(a.elbow) > kArmJointLimit) return std::nullopt;
  return a;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Gain, radial vignette and Gaussian noise, in place.
/// Gain, radial vignette and approximately Gaussian noise (Irwin-Hall sum
/// of four uniforms), in place.
inline void apply_lighting(std::vector<double>& v, int w, int h, const Lighting& l, std::uint64_t seed) {
  std::uint64_t state = seed;
  auto gauss = [&] {
    state = mix_seed(state, 1);
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) sum += static_cast<double>((state >> (16 * k)) & 0xFFFF) / 65535.0;
    return (sum - 2.0) * std::sqrt(3.0);
  };
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double rmax2 = cx * cx + cy * cy;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double r2 = ((x - cx) * (x - cx) + (y - cy) * (y - cy)) / (rmax2 > 0 ? rmax2 : 1.0);
      double& p = v[static_cast<std::size_t>(y) * w + x];
      p = p * l.gain * (1.0 - l.vignette * r2);
      if (l.noise_sigma > 0) p += l.noise_sigma * gauss();
    }
}

/// Parameter interval of the line A + u*dir (|dir| = 1) inside the capsule
/// of radius r around segment ab.
inline std::optional<std::pair<double, double>> line_capsule_interval(Point2 a_line, Point2 dir, Point2 a, Point2 b,
                                                                       double r) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  auto disk = [&](Point2 q) {
    const Point2 d = a_line - q;
    const double bb = dot(d, dir);
    const double disc = bb * bb - (dot(d, d) - r * r);
    if (disc < 0) return;
    const double s = std::sqrt(disc);
    lo = std::min(lo, -bb - s);
    hi = std::max(hi, -bb + s);
  };
  disk(a);
  disk(b);
  const double len = distance(a, b);
  if (len > 1e-12) {
    const Point2 e = (b - a) * (1.0 / len);
    const Point2 nrm{-e.y, e.x};
    // alpha + beta*u within [lo_b, hi_b]
    auto slab = [](double alpha, double beta, double lo_b, double hi_b, double& s0, double& s1) {
      if (std::abs(beta) < 1e-12) {
        if (alpha < lo_b || alpha > hi_b) s0 = 1, s1 = 0;
        return;
      }
      double u0 = (lo_b - alpha) / beta, u1 = (hi_b - alpha) / beta;
      if (u0 > u1) std::swap(u0, u1);
      s0 = std::max(s0, u0);
      s1 = std::min(s1, u1);
    };
    double s0 = -std::numeric_limits<double>::infinity(), s1 = -s0;
    const Point2 d = a_line - a;
    slab(dot(d, nrm), dot(dir, nrm), -r, r, s0, s1);
    slab(dot(d, e), dot(dir, e), 0.0, len, s0, s1);
    if (s0 <= s1) {
      lo = std::min(lo, s0);
      hi = std::max(hi, s1);
    }
  }
  if (lo > hi) return std::nullopt;
  return std::pair{lo, hi};
}

inline GrayImage to_gray(const std::vector<double>& v, int w, int h) {
  GrayImage img(w, h);
  auto px = img.pixels();
  for (std::size_t i = 0; i < v.size(); ++i) px[i] = clamp_u8(v[i]);
  return img;
}

}  // namespace detail

struct TrackSegment {
  Point2 a, b;
};

inline std::vector<TrackSegment> track_segments(const TrackTopology& t) {
  std::vector<TrackSegment> segs;
  for (auto [a, b] : t.edges)
    segs.push_back({t.nodes[static_cast<std::size_t>(a)].pos, t.nodes[static_cast<std::size_t>(b)].pos});
  return segs;
}

/// Top-down ground patch in front of the robot: column grows to the robot's
/// right, row 0 is the far edge. A darkened band across the top rows stands
/// in for the horizon.
inline GrayImage render_onboard(const SceneSpec& scene, const Pose2D& pose, std::uint64_t frame_index = 0,
                                const OnboardCamera& cam = {}) {
  const int n = cam.px;
  const double ppm = cam.px_per_mm();
  const Point2 fwd{std::cos(pose.heading), std::sin(pose.heading)};
  const Point2 right{std::sin(pose.heading), -std::cos(pose.heading)};
  const Point2 origin{pose.x, pose.y};
  const double half_w = scene.stroke_width_mm / 2.0;

  // Only segments that can touch the patch.
  const double reach = cam.near_mm + cam.patch_mm + cam.patch_mm;
  std::vector<TrackSegment> near;
  for (const auto& s : track_segments(scene.track))
    if (segment_distance(origin, s.a, s.b) <= reach) near.push_back(s);

  std::vector<double> v(static_cast<std::size_t>(n) * n, kFloor);
  std::vector<double> dist(static_cast<std::size_t>(n));
  const int horizon_rows = n * 12 / 100;
  const double reach_mm = half_w + 1.0 / ppm;
  for (int r = 0; r < n; ++r) {
    const double ahead = cam.near_mm + (n - r - 0.5) / ppm;
    // Row points are row_origin + right * u with u the lateral offset in mm.
    const Point2 row_origin = origin + fwd * ahead;
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (const auto& s : near) {
      const auto span = detail::line_capsule_interval(row_origin, right, s.a, s.b, reach_mm);
      if (!span) continue;
      const int c0 = std::max(0, static_cast<int>(std::floor(span->first * ppm + n / 2.0 - 0.5)));
      const int c1 = std::min(n - 1, static_cast<int>(std::ceil(span->second * ppm + n / 2.0 - 0.5)));
      for (int c = c0; c <= c1; ++c) {
        const double lateral = (c + 0.5 - n / 2.0) / ppm;
        dist[static_cast<std::size_t>(c)] =
            std::min(dist[static_cast<std::size_t>(c)], segment_distance(row_origin + right * lateral, s.a, s.b));
      }
    }
    const double shade = r < horizon_rows ? 0.3 : 1.0;
    for (int c = 0; c < n; ++c) {
      // Analytic edge coverage over one pixel footprint.
      const double cover = std::clamp(0.5 + (half_w - dist[static_cast<std::size_t>(c)]) * ppm, 0.0, 1.0);
      v[static_cast<std::size_t>(r) * n + c] = (kFloor + (kTape - kFloor) * cover) * shade;
    }
  }
  detail::apply_lighting(v, n, n, scene.lighting, detail::mix_seed(scene.seed, frame_index + 1));
  return detail::to_gray(v, n, n);
}

/// World (mm) -> overhead image (px) projection of the scene camera. The
/// projection is re-centred so the middle of the grid lands mid-frame.
inline Homography overhead_projection(const OverheadCamera& cam) {
  const double deg = std::numbers::pi / 180.0;
  const double ax = cam.tilt_x_deg * deg, ay = cam.tilt_y_deg * deg, az = cam.yaw_deg * deg;
  const Mat3 rx{{{1, 0, 0}, {0, std::cos(ax), -std::sin(ax)}, {0, std::sin(ax), std::cos(ax)}}};
  const Mat3 ry{{{std::cos(ay), 0, std::sin(ay)}, {0, 1, 0}, {-std::sin(ay), 0, std::cos(ay)}}};
  const Mat3 rz{{{std::cos(az), -std::sin(az), 0}, {std::sin(az), std::cos(az), 0}, {0, 0, 1}}};
  const Point2 centre{kCellMm * (kGridCols - 1) / 2.0, kCellMm * (kGridRows - 1) / 2.0};
  const double d = cam.height_mm;
  const double f = cam.scale * d;
  // Ground point (X, Y) sits at (X - cx, Y - cy, D) in the untilted camera.
  const Homography ground(Mat3{{{1, 0, -centre.x}, {0, 1, -centre.y}, {0, 0, d}}});
  const Homography rot = Homography(rz) * Homography(ry) * Homography(rx);
  const Homography k(Mat3{{{f, 0, 0}, {0, f, 0}, {0, 0, 1}}});
  const Homography h = k * rot * ground;
  const Point2 c = h.apply(centre);
  return Homography::translation(cam.width / 2.0 - c.x, cam.height / 2.0 - c.y) * h;
}

struct OverheadRender {
  GrayImage image;
  Homography world_to_px;
  std::vector<std::optional<Point2>> marker_px;  ///< flat grid order; empty when hidden
  std::vector<DropZone> zones_px;                ///< drop polygons in image px
};

inline bool marker_hidden(const SceneSpec& s, std::size_t flat) {
  return std::find(s.hidden_markers.begin(), s.hidden_markers.end(), static_cast<int>(flat)) !=
         s.hidden_markers.end();
}

/// Shades the scene through an arbitrary world -> px projective view.
inline GrayImage render_view(const SceneSpec& scene, const Homography& world_to_px, int w, int h) {
  const Homography px_to_w = world_to_px.inverse();
  std::vector<Box> boxes;
  for (const auto& z : scene.drop_zones) boxes.push_back(bounding_box(z.polygon));

  const double half_stroke = kMarkerStrokeMm / 2.0;
  auto shade = [&](Point2 p) -> double {
    for (std::size_t z = 0; z < scene.drop_zones.size(); ++z) {
      const Box& b = boxes[z];
      if (p.x >= b.min_x && p.x <= b.max_x && p.y >= b.min_y && p.y <= b.max_y &&
          contains(scene.drop_zones[z].polygon, p))
        return kPaper;
    }
    const int i = static_cast<int>(std::lround(p.x / kCellMm));
    const int j = static_cast<int>(std::lround(p.y / kCellMm));
    if (i >= 0 && i < kGridCols && j >= 0 && j < kGridRows &&
        !marker_hidden(scene, MarkerLayout::flat({i, j}))) {
      const Point2 m = scene.markers.at({i, j});
      const double dx = std::abs(p.x - m.x), dy = std::abs(p.y - m.y);
      if ((dx <= half_stroke && dy <= kMarkerArmMm) || (dy <= half_stroke && dx <= kMarkerArmMm))
        return kMarkerInk;
    }
    const bool in_grid_x = p.x >= 0 && p.x <= kCellMm * (kGridCols - 1);
    const bool in_grid_y = p.y >= 0 && p.y <= kCellMm * (kGridRows - 1);
    const double ox = std::abs(p.x - std::round(p.x / kCellMm) * kCellMm);
    const double oy = std::abs(p.y - std::round(p.y / kCellMm) * kCellMm);
    if ((in_grid_y && ox <= 0.5 && in_grid_x) || (in_grid_x && oy <= 0.5 && in_grid_y)) return kOutline;
    return kFloor;
  };

  std::vector<double> v(static_cast<std::size_t>(w) * h, kFloor);
  static constexpr double offs[3] = {-1.0 / 3.0, 0.0, 1.0 / 3.0};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (double oy : offs)
        for (double ox : offs) acc += shade(px_to_w.apply({x + ox, y + oy}));
      v[static_cast<std::size_t>(y) * w + x] = acc / 9.0;
    }
  detail::apply_lighting(v, w, h, scene.lighting, detail::mix_seed(scene.seed, 0));
  return detail::to_gray(v, w, h);
}

/// Bird's-eye render of the destination grid: faint cell outlines, the
/// cross-hair markers and the operator's drop zones, with 3x3 supersampling.
inline OverheadRender render_overhead(const SceneSpec& scene) {
  OverheadRender out;
  out.world_to_px = overhead_projection(scene.camera);
  for (std::size_t k = 0; k < scene.markers.points.size(); ++k) {
    if (marker_hidden(scene, k))
      out.marker_px.emplace_back(std::nullopt);
    else
      out.marker_px.emplace_back(out.world_to_px.apply(scene.markers.points[k]));
  }
  for (const auto& z : scene.drop_zones) {
    DropZone zp{z.destination, {}};
    for (auto p : z.polygon.vertices) zp.polygon.vertices.push_back(out.world_to_px.apply(p));
    out.zones_px.push_back(std::move(zp));
  }
  out.image = render_view(scene, out.world_to_px, scene.camera.width, scene.camera.height);
  return out;
}

/// Ground-truth segmentation of the overhead frame: 1 on marker strokes and
/// drop zones (pixel centres), 0 elsewhere.
inline BinaryImage render_overhead_label(const SceneSpec& scene) {
  const Homography to_w = overhead_projection(scene.camera).inverse();
  BinaryImage out(scene.camera.width, scene.camera.height, 0);
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x) {
      const Point2 p = to_w.apply({static_cast<double>(x), static_cast<double>(y)});
      bool fg = std::any_of(scene.drop_zones.begin(), scene.drop_zones.end(),
                            [&](const DropZone& z) { return contains(z.polygon, p); });
      for (std::size_t k = 0; k < scene.markers.points.size() && !fg; ++k) {
        if (marker_hidden(scene, k)) continue;
        const double dx = std::abs(p.x - scene.markers.points[k].x), dy = std::abs(p.y - scene.markers.points[k].y);
        fg = (dx <= kMarkerStrokeMm / 2 && dy <= kMarkerArmMm) || (dy <= kMarkerStrokeMm / 2 && dx <= kMarkerArmMm);
      }
      out.at(x, y) = fg ? 1 : 0;
    }
  return out;
}

/// Destination k seen straight down at 1 px per mm, corner markers at the
/// tile corners: the reference a rectified tile should match.
inline GrayImage render_destination_tile(const SceneSpec& scene, int k) {
  if (k < 0 || k >= kDestinations) throw ContractError("destination index must be 0..3");
  return render_view(scene, Homography::translation(-k * kCellMm, 0.0), kTilePx, kTilePx);
}

// ---------------------------------------------------------------------------
// Randomized scenes

enum class ShapeKind { Convex, LShape, Square };

/// A drop area well inside destination `dest` whose pole of inaccessibility
/// is unique: near-regular convex polygons, equal-arm L shapes, squares.
inline Polygon random_drop_zone(std::mt19937_64& rng, int dest, std::optional<ShapeKind> kind = std::nullopt) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double margin = 25.0;
  const ShapeKind k = kind ? *kind : static_cast<ShapeKind>(std::uniform_int_distribution<int>(0, 2)(rng));
  std::vector<Point2> local;  // centred at the origin
  switch (k) {
    case ShapeKind::Convex: {
      const int n = std::uniform_int_distribution<int>(5, 8)(rng);
      const double r = 50 + 40 * u(rng);
      const double phase = u(rng) * 2 * std::numbers::pi;
      for (int i = 0; i < n; ++i) {
        const double a = phase + 2 * std::numbers::pi * (i + 0.15 * (2 * u(rng) - 1)) / n;
        const double ri = r * (1.0 + 0.1 * (2 * u(rng) - 1));
        local.push_back({ri * std::cos(a), ri * std::sin(a)});
      }
      break;
    }
    case ShapeKind::LShape: {
      const double s = 120 + 60 * u(rng), t = s * (0.4 + 0.15 * u(rng));
      local = {{0, 0}, {s, 0}, {s, t}, {t, t}, {t, s}, {0, s}};
      for (auto& p : local) p = p - Point2{s / 2, s / 2};
      break;
    }
    case ShapeKind::Square: {
      const double s = 80 + 80 * u(rng);
      local = {{-s / 2, -s / 2}, {s / 2, -s / 2}, {s / 2, s / 2}, {-s / 2, s / 2}};
      break;
    }
  }
  // Random rotation (squares and Ls keep to +/-30 deg so they stay legible).
  const double rot = (k == ShapeKind::Convex ? 2 * std::numbers::pi : std::numbers::pi / 3) * (u(rng) - 0.5);
  double r_max = 0;
  for (auto& p : local) {
    p = {p.x * std::cos(rot) - p.y * std::sin(rot), p.x * std::sin(rot) + p.y * std::cos(rot)};
    r_max = std::max({r_max, std::abs(p.x), std::abs(p.y)});
  }
  const double room = std::max(0.0, kCellMm / 2 - margin - r_max);
  const Point2 c{dest * kCellMm + kCellMm / 2 + room * (2 * u(rng) - 1), kCellMm / 2 + room * (2 * u(rng) - 1)};
  Polygon poly;
  for (auto p : local) poly.vertices.push_back(p + c);
  return make_ccw(poly);
}

struct RandomSceneOptions {
  double max_tilt_deg = 10.0;
  double max_yaw_deg = 5.0;
  double gain_min = 0.8;
  double gain_max = 1.2;
  int zones = 1;
};

/// Default track with a random overhead camera pose, lighting and drop zones
/// in distinct destinations.
inline SceneSpec random_scene(std::uint64_t seed, const RandomSceneOptions& o = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0), g(o.gain_min, o.gain_max);
  SceneSpec s = default_scene();
  s.seed = seed;
  s.camera.height = 512;
  s.camera.scale = 0.9;
  // Redraw the pose until every marker sits well inside the frame.
  for (int attempt = 0;; ++attempt) {
    s.camera.tilt_x_deg = o.max_tilt_deg * u(rng);
    s.camera.tilt_y_deg = o.max_tilt_deg * u(rng);
    s.camera.yaw_deg = o.max_yaw_deg * u(rng);
    const Homography h = overhead_projection(s.camera);
    const bool inside = std::all_of(s.markers.points.begin(), s.markers.points.end(), [&](Point2 w) {
      const Point2 p = h.apply(w);
      return p.x >= 20 && p.y >= 20 && p.x <= s.camera.width - 21 && p.y <= s.camera.height - 21;
    });
    if (inside) break;
    if (attempt == 100) throw GenerationError("no camera pose keeps the markers in frame");
  }
  s.lighting.gain = g(rng);
  std::vector<int> dests{0, 1, 2, 3};
  std::shuffle(dests.begin(), dests.end(), rng);
  for (int z = 0; z < std::min(o.zones, kDestinations); ++z)
    s.drop_zones.push_back({dests[static_cast<std::size_t>(z)], random_drop_zone(rng, dests[static_cast<std::size_t>(z)])});
  return s;
}

// ---------------------------------------------------------------------------
// Simulation loop

struct Job {
  std::optional<int> destination_override;
};

/// Supplies delivery info for a job; throws on failure.
using DeliveryProvider = std::function<DeliveryInfo(const Job&)>;

struct SimConfig {
  NavConfig nav;
  std::size_t max_steps = 20000;  ///< per job
};

struct TraceRecord {
  double t = 0.0;
  std::size_t step = 0;
  std::size_t job = 0;
  NavPhase phase = NavPhase::Idle;
  Pose2D pose;
  std::optional<double> error_px;
  WheelSpeeds cmd;
  std::optional<NavEvent> event;
};

struct JobOutcome {
  std::optional<DeliveryInfo> delivery;
  std::optional<Point2> delivered;  ///< where the object was set down
  bool completed = false;           ///< reached DONE without a fault
  bool timeout = false;
  std::string error;
  std::size_t steps = 0;
  std::size_t junctions_consumed = 0;
  std::size_t plan_length = 0;
  double pipeline_ms = 0.0;  ///< total onboard processing time
};

struct SimResult {
  std::vector<JobOutcome> jobs;
  std::vector<TraceRecord> trace;
  Pose2D final_pose;
  NavPhase final_phase = NavPhase::Done;
  bool timeout = false;
};

inline nlohmann::json trace_to_json(const TraceRecord& r) {
  nlohmann::json j{{"t", r.t},
                   {"step", r.step},
                   {"job", r.job},
                   {"state", to_string(r.phase)},
                   {"pose", {{"x", r.pose.x}, {"y", r.pose.y}, {"heading", r.pose.heading}}},
                   {"cmd", {{"left", r.cmd.left}, {"right", r.cmd.right}}}};
  j["error"] = r.error_px ? nlohmann::json(*r.error_px) : nlohmann::json(nullptr);
  if (r.event) j["event"] = to_string(*r.event);
  return j;
}

/// Robot-local arm frame: x forward, y to the left, origin at the axle.
inline Point2 world_to_robot(const Pose2D& p, Point2 w) {
  const Point2 d{w.x - p.x, w.y - p.y};
  return {d.x * std::cos(p.heading) + d.y * std::sin(p.heading),
          -d.x * std::sin(p.heading) + d.y * std::cos(p.heading)};
}

inline Point2 robot_to_world(const Pose2D& p, Point2 r) {
  return {p.x + r.x * std::cos(p.heading) - r.y * std::sin(p.heading),
          p.y + r.x * std::sin(p.heading) + r.y * std::cos(p.heading)};
}

/// Stateful simulator: one robot, one object, jobs run to completion.
class Simulator {
 public:
  using Observer = std::function<void(const TraceRecord&)>;

  Simulator(SceneSpec scene, SimConfig cfg) : scene_(std::move(scene)), cfg_(std::move(cfg)), pose_(scene_.start) {}

  const SceneSpec& scene() const noexcept { return scene_; }
  const Pose2D& pose() const noexcept { return pose_; }
  const NavState& nav() const noexcept { return nav_; }
  std::size_t steps() const noexcept { return step_; }

  void set_observer(Observer obs) { observer_ = std::move(obs); }
  void set_trace_enabled(bool on) { keep_trace_ = on; }

  JobOutcome run_job(const Job& job, const DeliveryProvider& provider, std::size_t job_index,
                     std::vector<TraceRecord>* trace = nullptr) {
    JobOutcome out;
    if (nav_.phase != NavPhase::Idle && nav_.phase != NavPhase::Done) nav_ = NavState{};  // after a timeout
    nav_ = begin_job(nav_);
    const std::size_t start = step_;
    while (step_ - start < cfg_.max_steps) {
      const GrayImage frame = render_onboard(scene_, pose_, step_, cfg_.nav.camera);
      const auto t0 = std::chrono::steady_clock::now();
      NavStepResult res = nav_step(std::move(nav_), frame, cfg_.nav);
      out.pipeline_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      nav_ = std::move(res.state);

      if (res.event == NavEvent::Pick) {
        carrying_ = true;
      } else if (res.event == NavEvent::RequestDeliveryInfo) {
        try {
          out.delivery = provider(job);
          const RoutePlan plan = plan_route(out.delivery->destination, scene_.track);
          out.plan_length = plan.size();
          nav_ = accept_delivery(std::move(nav_), plan);
        } catch (const std::exception& e) {
          // No route: the robot keeps waiting and the job runs out of steps.
          out.error = e.what();
        }
      } else if (res.event == NavEvent::Drop && carrying_) {
        carrying_ = false;
        if (out.delivery) {
          const Point2 target{out.delivery->drop_x_mm, out.delivery->drop_y_mm};
          if (auto ik = arm_ik_2link(world_to_robot(pose_, target), scene_.arm.l1, scene_.arm.l2))
            out.delivered = robot_to_world(pose_, arm_fk(*ik, scene_.arm.l1, scene_.arm.l2));
          else
            out.delivered = Point2{pose_.x, pose_.y};
        }
      }

      TraceRecord rec{step_ * cfg_.nav.dt, step_, job_index, nav_.phase, pose_, res.diag.error_px, res.cmd, res.event};
      if (observer_) observer_(rec);
      if (trace) trace->push_back(rec);

      if (res.cmd.left != 0.0 || res.cmd.right != 0.0)
        pose_ = step_diff_drive(pose_, res.cmd, cfg_.nav.wheelbase, cfg_.nav.dt);
      ++step_;
      if (nav_.phase == NavPhase::Done) break;
    }
    out.steps = step_ - start;
    out.junctions_consumed = nav_.junctions_consumed;
    if (nav_.phase != NavPhase::Done) {
      out.timeout = true;
      if (out.error.empty()) out.error = "step budget exceeded";
    } else if (!nav_.fault.empty()) {
      out.error = nav_.fault;
    } else {
      out.completed = out.delivered.has_value();
      if (!out.completed && out.error.empty()) out.error = "object was not delivered";
    }
    return out;
  }

 private:
  SceneSpec scene_;
  SimConfig cfg_;
  Pose2D pose_;
  NavState nav_;
  bool carrying_ = false;
  std::size_t step_ = 0;
  bool keep_trace_ = true;
  Observer observer_;
};

/// Runs the job script from the scene's start pose.
inline SimResult sim_run(const SceneSpec& scene, const SimConfig& cfg, const std::vector<Job>& jobs,
                         const DeliveryProvider& provider) {
  SimResult result;
  Simulator sim(scene, cfg);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    result.jobs.push_back(sim.run_job(jobs[i], provider, i, &result.trace));
    if (result.jobs.back().timeout) {
      result.timeout = true;
      break;
    }
  }
  result.final_pose = sim.pose();
  result.final_phase = result.timeout ? sim.nav().phase : NavPhase::Done;
  return result;
}

}  // namespace agvlab
