#include <gtest/gtest.h>

#include <random>

#include "agvlab/simworld.hpp"
#include "oracles.hpp"

using namespace agvlab;

namespace {

constexpr double kPi = std::numbers::pi;

DeliveryProvider fixed_delivery(int dest, Point2 drop) {
  return [=](const Job&) {
    DeliveryInfo d;
    d.destination = dest;
    d.drop_x_mm = drop.x;
    d.drop_y_mm = drop.y;
    return d;
  };
}

SceneSpec straight_scene() {
  SceneSpec s = default_scene();
  s.track.nodes = {{"S", {140, -400}, NodeKind::Source, -1}, {"D0", {140, -80}, NodeKind::Terminal, 0}};
  s.track.edges = {{0, 1}};
  s.start = {140, -340, -kPi / 2};  // facing the source
  return s;
}

}  // namespace

TEST(DiffDrive, StraightAndSpin) {
  const Pose2D p{10, 20, 0.3};
  const Pose2D q = step_diff_drive(p, {50, 50}, 120, 0.5);
  EXPECT_NEAR(q.x, 10 + 25 * std::cos(0.3), 1e-12);
  EXPECT_NEAR(q.y, 20 + 25 * std::sin(0.3), 1e-12);
  EXPECT_NEAR(q.heading, 0.3, 1e-12);

  const Pose2D r = step_diff_drive(p, {-30, 30}, 120, 0.5);
  EXPECT_NEAR(r.x, 10, 1e-12);
  EXPECT_NEAR(r.y, 20, 1e-12);
  EXPECT_NEAR(r.heading, 0.3 + 60.0 / 120 * 0.5, 1e-12);

  const Pose2D z = step_diff_drive(p, {0, 0}, 120, 0.1);
  EXPECT_EQ(z.x, p.x);
  EXPECT_EQ(z.y, p.y);
  EXPECT_NEAR(z.heading, p.heading, 1e-15);
  EXPECT_THROW(step_diff_drive(p, {1, 1}, 120, 0), DomainError);
}

TEST(DiffDrive, ClosedFormArc) {
  // v = 100, omega = 20/120 = 1/6 rad/s: radius 600 mm about (0, 600).
  const Pose2D q = step_diff_drive({}, {90, 110}, 120, 1.0);
  EXPECT_NEAR(q.heading, 1.0 / 6.0, 1e-12);
  EXPECT_NEAR(q.x, 600 * std::sin(1.0 / 6.0), 1e-9);
  EXPECT_NEAR(q.y, 600 - 600 * std::cos(1.0 / 6.0), 1e-9);
  EXPECT_NEAR(std::hypot(q.x, q.y - 600), 600, 1e-9);
}

TEST(DiffDrive, HalfStepsCompose) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> sp(-150, 150), pos(-1000, 1000), hd(-kPi, kPi), dt(0.001, 0.5);
  for (int i = 0; i < 2000; ++i) {
    const Pose2D p{pos(rng), pos(rng), hd(rng)};
    WheelSpeeds w{sp(rng), sp(rng)};
    if (i % 10 == 0) w.right = w.left;  // straight-line branch
    const double t = dt(rng);
    const Pose2D one = step_diff_drive(p, w, 120, t);
    const Pose2D two = step_diff_drive(step_diff_drive(p, w, 120, t / 2), w, 120, t / 2);
    EXPECT_NEAR(one.x, two.x, 1e-9);
    EXPECT_NEAR(one.y, two.y, 1e-9);
    EXPECT_NEAR(std::remainder(one.heading - two.heading, 2 * kPi), 0.0, 1e-9);
  }
}

TEST(ArmIk, Examples) {
  const auto ext = arm_ik_2link({500, 0}, 250, 250);
  ASSERT_TRUE(ext);
  EXPECT_NEAR(ext->shoulder, 0, 1e-9);
  EXPECT_NEAR(ext->elbow, 0, 1e-9);

  const auto a = arm_ik_2link({100, 100}, 100, 100);
  ASSERT_TRUE(a);
  const Point2 fk = arm_fk(*a, 100, 100);
  EXPECT_LT(distance(fk, {100, 100}), 1e-6);
  EXPECT_GE(a->elbow, 0.0);

  EXPECT_FALSE(arm_ik_2link({501, 0}, 250, 250));
  EXPECT_FALSE(arm_ik_2link({10, 0}, 300, 100));
}

TEST(ArmIk, RoundTripOverWorkspace) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ang(-kPi, kPi), rad(0, 1);
  int solved = 0;
  for (int i = 0; i < 2000; ++i) {
    const double l1 = 150 + 200 * rad(rng), l2 = 150 + 200 * rad(rng);
    const double r = std::abs(l1 - l2) + (l1 + l2 - std::abs(l1 - l2)) * rad(rng);
    const double a = ang(rng);
    const Point2 target{r * std::cos(a), r * std::sin(a)};
    if (auto a = arm_ik_2link(target, l1, l2)) {
      ++solved;
      EXPECT_LT(distance(arm_fk(*a, l1, l2), target), 1e-6);
      EXPECT_LE(std::abs(a->shoulder), kArmJointLimit);
      EXPECT_LE(std::abs(a->elbow), kArmJointLimit);
    }
  }
  EXPECT_GT(solved, 1000);
}

TEST(RenderOnboard, CentredAlignedLine) {
  const SceneSpec s = default_scene();
  const NavConfig cfg;
  const GrayImage f = render_onboard(s, {560, -650, kPi / 2}, 0);
  ASSERT_EQ(f.width(), 300);
  ASSERT_EQ(f.height(), 300);
  const auto err = path_error(onboard_binarize(f), cfg.roi);
  ASSERT_TRUE(err);
  EXPECT_NEAR(*err, 0.0, 2.0);
}

TEST(RenderOnboard, LateralOffsetSign) {
  const SceneSpec s = default_scene();
  const NavConfig cfg;
  // Robot 20 mm right of the trunk: the line appears left of centre.
  const auto right_of = path_error(onboard_binarize(render_onboard(s, {580, -650, kPi / 2})), cfg.roi);
  const auto left_of = path_error(onboard_binarize(render_onboard(s, {540, -650, kPi / 2})), cfg.roi);
  ASSERT_TRUE(right_of && left_of);
  EXPECT_NEAR(*right_of, -40.0, 3.0);
  EXPECT_NEAR(*left_of, 40.0, 3.0);
  // Negative error steers left (right wheel faster), back toward the line.
  const auto w = wheel_command(pid_step({}, {}, *right_of).steer, 100, 0.5, 120);
  EXPECT_GT(w.right, w.left);
}

TEST(RenderOnboard, OffTrackIsTerminal) {
  const NavConfig cfg;
  const BinaryImage b = onboard_binarize(render_onboard(default_scene(), {2000, 2000, 0.0}));
  EXPECT_EQ(classify_junction(boundary_profile(b, cfg.roi), static_cast<double>(path_mass(b, cfg.roi))),
            JunctionType::Terminal);
}

TEST(RenderOnboard, NoFalseTerminalsOnStraights) {
  const SceneSpec s = default_scene();
  const NavConfig cfg;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> along(-700, -520), lat(-25, 25), hd(-0.2, 0.2);
  for (int i = 0; i < 150; ++i) {
    const Pose2D p{560 + lat(rng), along(rng), kPi / 2 + hd(rng)};
    const BinaryImage b = onboard_binarize(render_onboard(s, p, static_cast<std::uint64_t>(i)));
    const auto type =
        classify_junction(boundary_profile(b, cfg.roi), static_cast<double>(path_mass(b, cfg.roi)));
    EXPECT_NE(type, JunctionType::Terminal) << "pose " << p.x << "," << p.y;
    EXPECT_TRUE(path_error(b, cfg.roi).has_value());
  }
}

TEST(RenderOnboard, DeterministicPerSeed) {
  SceneSpec s = default_scene();
  const Pose2D p{560, -600, kPi / 2};
  EXPECT_EQ(render_onboard(s, p, 4), render_onboard(s, p, 4));
  EXPECT_NE(render_onboard(s, p, 4), render_onboard(s, p, 5));
  s.seed = 99;
  EXPECT_NE(render_onboard(s, p, 4), render_onboard(default_scene(), p, 4));
}

TEST(RenderOverhead, IdentityCameraMarkerPositions) {
  SceneSpec s = default_scene();
  s.camera.width = 1200;
  s.camera.height = 360;
  const auto r = render_overhead(s);
  ASSERT_EQ(r.marker_px.size(), 10u);
  // Zero tilt: a pure scale of 1 px/mm plus the centring offset (40, 40).
  for (std::size_t k = 0; k < 10; ++k) {
    const Point2 w = s.markers.points[k];
    ASSERT_TRUE(r.marker_px[k]);
    EXPECT_NEAR(r.marker_px[k]->x, w.x + 40, 1e-9);
    EXPECT_NEAR(r.marker_px[k]->y, w.y + 40, 1e-9);
    // Marker centre is dark in the image.
    EXPECT_LT(r.image.at(static_cast<int>(std::lround(r.marker_px[k]->x)),
                         static_cast<int>(std::lround(r.marker_px[k]->y))),
              80);
  }
}

TEST(RenderOverhead, TiltKeepsStraightLinesStraight) {
  SceneSpec s = default_scene();
  s.camera.tilt_x_deg = 8;
  s.camera.tilt_y_deg = -6;
  s.camera.yaw_deg = 3;
  const Homography h = overhead_projection(s.camera);
  // Points along the grid's outer edge y = 0.
  std::vector<Point2> pts;
  for (int i = 0; i <= 20; ++i) pts.push_back(h.apply({i * 56.0, 0.0}));
  // Total least squares line through the projected points.
  Point2 m{};
  for (auto p : pts) m = m + p * (1.0 / pts.size());
  double sxx = 0, sxy = 0, syy = 0;
  for (auto p : pts) {
    sxx += (p.x - m.x) * (p.x - m.x);
    sxy += (p.x - m.x) * (p.y - m.y);
    syy += (p.y - m.y) * (p.y - m.y);
  }
  const double theta = 0.5 * std::atan2(2 * sxy, sxx - syy);
  const Point2 n{-std::sin(theta), std::cos(theta)};
  for (auto p : pts) EXPECT_LT(std::abs(dot(p - m, n)), 0.5);
  // And the perspective is real: spacing along the line is not uniform.
  EXPECT_GT(std::abs(distance(pts[0], pts[1]) - distance(pts[19], pts[20])), 0.05);
}

TEST(RenderOverhead, NoiseSeedDoesNotMoveGroundTruth) {
  SceneSpec a = default_scene();
  a.camera.tilt_x_deg = 5;
  SceneSpec b = a;
  b.seed = 12345;
  const auto ra = render_overhead(a), rb = render_overhead(b);
  ASSERT_EQ(ra.marker_px.size(), rb.marker_px.size());
  for (std::size_t k = 0; k < ra.marker_px.size(); ++k) {
    EXPECT_EQ(ra.marker_px[k]->x, rb.marker_px[k]->x);
    EXPECT_EQ(ra.marker_px[k]->y, rb.marker_px[k]->y);
  }
  EXPECT_NE(ra.image, rb.image);
  EXPECT_EQ(render_overhead(a).image, ra.image);
}

TEST(RenderOverhead, HiddenMarkersAndZones) {
  SceneSpec s = default_scene();
  s.hidden_markers = {0, 9};
  s.drop_zones = {{2, Polygon{{{640, 80}, {760, 80}, {760, 200}, {640, 200}}}}};
  const auto r = render_overhead(s);
  EXPECT_FALSE(r.marker_px[0]);
  EXPECT_FALSE(r.marker_px[9]);
  EXPECT_TRUE(r.marker_px[1]);
  ASSERT_EQ(r.zones_px.size(), 1u);
  const Point2 c = r.world_to_px.apply({700, 140});
  EXPECT_LT(r.image.at(static_cast<int>(c.x), static_cast<int>(c.y)), 80);
}

TEST(SceneJson, RoundTripAndValidation) {
  SceneSpec s = default_scene();
  s.drop_zones = {{1, Polygon{{{330, 60}, {500, 60}, {420, 220}}}}};
  s.hidden_markers = {3};
  s.camera.tilt_x_deg = 4;
  const SceneSpec back = scene_from_json(scene_to_json(s));
  EXPECT_EQ(scene_to_json(back), scene_to_json(s));

  auto j = scene_to_json(s);
  j["scene_version"] = 2;
  EXPECT_THROW(scene_from_json(j), ParseError);
  j = scene_to_json(s);
  j["drop_zones"][0]["destination"] = 0;  // polygon lies in square 1
  EXPECT_THROW(scene_from_json(j), ParseError);
  j = scene_to_json(s);
  j["track"]["edges"].push_back({"S", "nowhere"});
  EXPECT_THROW(scene_from_json(j), ParseError);
  EXPECT_THROW(scene_from_json(nlohmann::json::array()), ParseError);
  EXPECT_THROW(scene_from_json(nlohmann::json{{"seed", 1}}), ParseError);
  j = scene_to_json(s);
  j["hidden_markers"] = {1, 2};  // belongs under "markers"
  EXPECT_THROW(scene_from_json(j), ParseError);
}

TEST(SimRun, StraightSingleDestination) {
  const SceneSpec s = straight_scene();
  const Point2 drop{140, 140};
  const auto r = sim_run(s, SimConfig{}, {Job{}}, fixed_delivery(0, drop));
  ASSERT_EQ(r.jobs.size(), 1u);
  const auto& j = r.jobs[0];
  EXPECT_TRUE(j.completed) << j.error;
  EXPECT_FALSE(r.timeout);
  EXPECT_EQ(r.final_phase, NavPhase::Done);
  ASSERT_TRUE(j.delivered);
  EXPECT_LT(distance(*j.delivered, drop), 10.0);
  EXPECT_EQ(j.junctions_consumed, 0u);
  // Back at the source, facing it, ready for the next pick.
  EXPECT_LT(std::hypot(r.final_pose.x - 140, r.final_pose.y + 400), 60.0);
  EXPECT_LT(std::abs(std::remainder(r.final_pose.heading + kPi / 2, 2 * kPi)), 0.1);
}

TEST(SimRun, EmptyJobScriptIsImmediatelyDone) {
  const auto r = sim_run(default_scene(), SimConfig{}, {}, fixed_delivery(0, {140, 140}));
  EXPECT_TRUE(r.jobs.empty());
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(r.final_phase, NavPhase::Done);
  EXPECT_FALSE(r.timeout);
}

TEST(SimRun, DisconnectedTrackTimesOut) {
  SceneSpec s = default_scene();
  s.track.edges.pop_back();  // C3 - D3 removed
  SimConfig cfg;
  cfg.max_steps = 500;
  const auto r = sim_run(s, cfg, {Job{}, Job{}}, fixed_delivery(3, {980, 140}));
  EXPECT_TRUE(r.timeout);
  ASSERT_EQ(r.jobs.size(), 1u);
  EXPECT_TRUE(r.jobs[0].timeout);
  EXPECT_EQ(r.jobs[0].steps, 500u);
  EXPECT_EQ(r.trace.size(), 500u);
}

TEST(SimRun, EventsAndJunctionCountOverRandomJobs) {
  const SceneSpec s = default_scene();
  const auto src = s.track.nodes[static_cast<std::size_t>(s.track.source())].pos;
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> dest(0, 3);
  std::vector<Job> jobs(6);
  std::vector<int> dests;
  for (std::size_t i = 0; i < jobs.size(); ++i) dests.push_back(dest(rng));
  std::size_t calls = 0;
  const DeliveryProvider provider = [&](const Job&) {
    const int d = dests[calls++];
    DeliveryInfo info;
    info.destination = d;
    info.drop_x_mm = d * 280.0 + 140;
    info.drop_y_mm = 140;
    return info;
  };
  const auto r = sim_run(s, SimConfig{}, jobs, provider);
  ASSERT_EQ(r.jobs.size(), jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& j = r.jobs[i];
    EXPECT_TRUE(j.completed) << "job " << i << ": " << j.error;
    EXPECT_EQ(j.junctions_consumed, j.plan_length);
    ASSERT_TRUE(j.delivered);
    EXPECT_LT(distance(*j.delivered, {dests[i] * 280.0 + 140, 140}), 1e-6);
  }
  for (const auto& t : r.trace) {
    if (!t.event) continue;
    const Point2 at{t.pose.x, t.pose.y};
    if (*t.event == NavEvent::Pick) EXPECT_LT(distance(at, src), 60.0);
    if (*t.event == NavEvent::Drop) {
      EXPECT_GT(distance(at, src), 300.0);
      EXPECT_GT(at.y, -200.0);
    }
  }
}

TEST(SimRun, TraceJsonLines) {
  const auto r = sim_run(straight_scene(), SimConfig{}, {Job{}}, fixed_delivery(0, {140, 140}));
  ASSERT_FALSE(r.trace.empty());
  EXPECT_EQ(trace_to_json(r.trace.front()).at("state"), "LINE_FOLLOW");
  const auto pick = std::find_if(r.trace.begin(), r.trace.end(), [](const TraceRecord& t) { return t.event.has_value(); });
  ASSERT_NE(pick, r.trace.end());
  const auto j = trace_to_json(*pick);
  EXPECT_EQ(j.at("state"), "PICKING");
  EXPECT_EQ(j.at("event"), "PICK");
  for (const char* key : {"t", "step", "job", "pose", "cmd", "error"}) EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j.dump().find('\n'), std::string::npos);
}
