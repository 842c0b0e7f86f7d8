#pragma once

// Onboard decision layer: PID line following, junction handling, route
// planning from delivery info and the navigation state machine.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "agvlab/geometry.hpp"
#include "agvlab/imaging.hpp"

namespace agvlab {

struct PidGains {
  double kp = 1.0;
  double kd = 1.0;
  double ki = 0.0;
};

struct PidState {
  double prev_error = 0.0;
  double integral = 0.0;
  friend bool operator==(const PidState&, const PidState&) = default;
};

struct PidOutput {
  double steer = 0.0;
  PidState state;
};

inline PidOutput pid_step(const PidGains& g, const PidState& s, double error) {
  const double integral = s.integral + error;
  const double steer = g.kp * error + g.kd * (error - s.prev_error) + g.ki * integral;
  return {steer, PidState{error, integral}};
}

/// Wheel surface speeds, mm/s.
struct WheelSpeeds {
  double left = 0.0;
  double right = 0.0;
  friend bool operator==(const WheelSpeeds&, const WheelSpeeds&) = default;
};

/// Positive steer turns right: the left wheel runs faster.
inline WheelSpeeds wheel_command(double steer, double base, double k_turn, double v_max) {
  if (base < 0.0) throw DomainError("base speed must be non-negative");
  const double d = k_turn * steer;
  return {std::clamp(base + d, -v_max, v_max), std::clamp(base - d, -v_max, v_max)};
}

// ---------------------------------------------------------------------------
// Junctions

enum class JunctionType { Straight, LeftBranch, RightBranch, TJunction, Cross, Terminal };

inline const char* to_string(JunctionType t) {
  switch (t) {
    case JunctionType::Straight: return "STRAIGHT";
    case JunctionType::LeftBranch: return "LEFT_BRANCH";
    case JunctionType::RightBranch: return "RIGHT_BRANCH";
    case JunctionType::TJunction: return "T_JUNCTION";
    case JunctionType::Cross: return "CROSS";
    case JunctionType::Terminal: return "TERMINAL";
  }
  return "?";
}

struct JunctionThresholds {
  double side = 0.15;
  double top = 0.10;
  double empty = 0.02;          ///< strip fraction treated as zero
  double terminal_mass_px = 40;  ///< ROI path pixels below this count as empty
};

inline JunctionType classify_junction(const BoundaryProfile& p, double roi_mass_px,
                                      const JunctionThresholds& th = {}) {
  const bool strips_empty =
      p.left < th.empty && p.right < th.empty && p.top < th.empty && p.bottom < th.empty;
  if (strips_empty && roi_mass_px < th.terminal_mass_px) return JunctionType::Terminal;
  const bool left = p.left > th.side, right = p.right > th.side;
  if (left && right) return p.top > th.top ? JunctionType::Cross : JunctionType::TJunction;
  if (left) return JunctionType::LeftBranch;
  if (right) return JunctionType::RightBranch;
  return JunctionType::Straight;
}

// ---------------------------------------------------------------------------
// Track topology and route planning

enum class NodeKind { Source, Junction, Corner, Terminal };

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::Source: return "source";
    case NodeKind::Junction: return "junction";
    case NodeKind::Corner: return "corner";
    case NodeKind::Terminal: return "terminal";
  }
  return "?";
}

struct TrackNode {
  std::string id;
  Point2 pos;  ///< mm, world frame
  NodeKind kind = NodeKind::Corner;
  int destination = -1;  ///< terminals only
};

/// Undirected track graph. Every edge is a straight tape segment.
struct TrackTopology {
  std::vector<TrackNode> nodes;
  std::vector<std::pair<int, int>> edges;

  int find(const std::string& id) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].id == id) return static_cast<int>(i);
    return -1;
  }
  int source() const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].kind == NodeKind::Source) return static_cast<int>(i);
    return -1;
  }
  int terminal_for(int destination) const {
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].kind == NodeKind::Terminal && nodes[i].destination == destination)
        return static_cast<int>(i);
    return -1;
  }
  std::vector<int> neighbours(int n) const {
    std::vector<int> out;
    for (auto [a, b] : edges) {
      if (a == n) out.push_back(b);
      if (b == n) out.push_back(a);
    }
    return out;
  }
  std::size_t degree(int n) const { return neighbours(n).size(); }
};

enum class Turn { Left, Right, Straight };

inline const char* to_string(Turn t) {
  switch (t) {
    case Turn::Left: return "LEFT";
    case Turn::Right: return "RIGHT";
    case Turn::Straight: return "STRAIGHT";
  }
  return "?";
}

struct JunctionDecision {
  std::string junction;
  Turn turn = Turn::Straight;
  friend bool operator==(const JunctionDecision&, const JunctionDecision&) = default;
};

struct RoutePlan {
  int destination = -1;
  std::vector<JunctionDecision> outbound;
  std::vector<JunctionDecision> inbound;
  std::size_t size() const { return outbound.size() + inbound.size(); }
};

/// Turn taken when arriving along `in_dir` and leaving along `out_dir`
/// (counterclockwise is left).
inline Turn classify_turn(Point2 in_dir, Point2 out_dir) {
  const double angle = std::atan2(cross(in_dir, out_dir), dot(in_dir, out_dir));
  if (std::abs(angle) < std::numbers::pi / 4.0) return Turn::Straight;
  return angle > 0 ? Turn::Left : Turn::Right;
}

namespace detail {

inline std::vector<int> shortest_path(const TrackTopology& topo, int from, int to) {
  std::vector<int> prev(topo.nodes.size(), -2);
  std::deque<int> queue{from};
  prev[static_cast<std::size_t>(from)] = -1;
  while (!queue.empty()) {
    const int n = queue.front();
    queue.pop_front();
    if (n == to) break;
    for (int m : topo.neighbours(n))
      if (prev[static_cast<std::size_t>(m)] == -2) {
        prev[static_cast<std::size_t>(m)] = n;
        queue.push_back(m);
      }
  }
  if (prev[static_cast<std::size_t>(to)] == -2) return {};
  std::vector<int> path;
  for (int n = to; n != -1; n = prev[static_cast<std::size_t>(n)]) path.push_back(n);
  std::reverse(path.begin(), path.end());
  return path;
}

inline std::vector<JunctionDecision> decisions_along(const TrackTopology& topo,
                                                     const std::vector<int>& path) {
  std::vector<JunctionDecision> out;
  for (std::size_t i = 1; i + 1 < path.size(); ++i) {
    if (topo.degree(path[i]) < 3) continue;
    const Point2 a = topo.nodes[static_cast<std::size_t>(path[i - 1])].pos;
    const Point2 b = topo.nodes[static_cast<std::size_t>(path[i])].pos;
    const Point2 c = topo.nodes[static_cast<std::size_t>(path[i + 1])].pos;
    out.push_back({topo.nodes[static_cast<std::size_t>(path[i])].id, classify_turn(b - a, c - b)});
  }
  return out;
}

}  // namespace detail

/// Decisions at every branching node (degree >= 3) on the way from the
/// source to `target_node` and back. Corners are not decisions.
inline RoutePlan plan_route_to_node(const TrackTopology& topo, int target_node) {
  const int src = topo.source();
  if (src < 0) throw DomainError("track has no source node");
  if (target_node < 0 || target_node >= static_cast<int>(topo.nodes.size()))
    throw DomainError("unknown target node");
  RoutePlan plan;
  plan.destination = topo.nodes[static_cast<std::size_t>(target_node)].destination;
  if (target_node == src) return plan;
  auto path = detail::shortest_path(topo, src, target_node);
  if (path.empty()) throw DomainError("target is not reachable from the source");
  plan.outbound = detail::decisions_along(topo, path);
  std::reverse(path.begin(), path.end());
  plan.inbound = detail::decisions_along(topo, path);
  return plan;
}

inline RoutePlan plan_route(int destination, const TrackTopology& topo) {
  const int node = topo.terminal_for(destination);
  if (node < 0) throw DomainError("no terminal for destination " + std::to_string(destination));
  return plan_route_to_node(topo, node);
}

// ---------------------------------------------------------------------------
// Open-loop turn scripts

struct ScriptSegment {
  WheelSpeeds speeds;
  double duration = 0.0;  ///< seconds
};

using TurnScript = std::vector<ScriptSegment>;

enum class TurnKind { Left90, Right90, Turn180 };

/// In-place rotation by +/-90 or 180 degrees at wheel speed `speed`,
/// followed by a stop. Rotation rate is 2*speed/wheelbase.
inline TurnScript turn_script(TurnKind kind, double wheelbase, double speed) {
  if (!(speed > 0.0) || !(wheelbase > 0.0)) throw DomainError("turn speed and wheelbase must be positive");
  const double quarter = (std::numbers::pi / 2.0) * wheelbase / (2.0 * speed);
  const ScriptSegment left{{-speed, speed}, quarter};
  const ScriptSegment right{{speed, -speed}, quarter};
  TurnScript s;
  switch (kind) {
    case TurnKind::Left90: s = {left}; break;
    case TurnKind::Right90: s = {right}; break;
    case TurnKind::Turn180: s = {left, left}; break;
  }
  s.push_back({{0.0, 0.0}, 0.0});
  return s;
}

// ---------------------------------------------------------------------------
// Configuration

/// Onboard camera footprint: an orthographic ground patch in front of the
/// robot. The bottom image row sits `near_mm` ahead of the axle centre.
struct OnboardCamera {
  int px = 300;
  double patch_mm = 150.0;
  double near_mm = 30.0;
  double px_per_mm() const { return px / patch_mm; }
};

struct NavConfig {
  PidGains gains;
  double base_speed = 100.0;  ///< mm/s
  double k_turn = 0.5;        ///< mm/s per px of steer
  double v_max = 120.0;
  double turn_speed = 60.0;
  double creep_speed = 60.0;
  double wheelbase = 120.0;
  double dt = 1.0 / 30.0;
  double cooldown_mm = 60.0;
  RoiSpec roi{0, 180, 300, 120};
  JunctionThresholds thresholds;
  OnboardCamera camera;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys are an
/// error so typos do not pass silently.
inline NavConfig parse_nav_config(const std::string& text, NavConfig cfg = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  const std::map<std::string, double*> keys{
      {"kp", &cfg.gains.kp},
      {"kd", &cfg.gains.kd},
      {"ki", &cfg.gains.ki},
      {"base_speed", &cfg.base_speed},
      {"k_turn", &cfg.k_turn},
      {"v_max", &cfg.v_max},
      {"turn_speed", &cfg.turn_speed},
      {"creep_speed", &cfg.creep_speed},
      {"wheelbase", &cfg.wheelbase},
      {"dt", &cfg.dt},
      {"cooldown_mm", &cfg.cooldown_mm},
      {"theta_side", &cfg.thresholds.side},
      {"theta_top", &cfg.thresholds.top},
      {"terminal_mass_px", &cfg.thresholds.terminal_mass_px},
      {"camera_patch_mm", &cfg.camera.patch_mm},
      {"camera_near_mm", &cfg.camera.near_mm},
  };
  const std::map<std::string, int*> int_keys{
      {"roi_x0", &cfg.roi.x0}, {"roi_y0", &cfg.roi.y0}, {"roi_w", &cfg.roi.w},
      {"roi_h", &cfg.roi.h},   {"camera_px", &cfg.camera.px},
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      std::size_t used = 0;
      if (auto it = keys.find(key); it != keys.end()) {
        *it->second = std::stod(value, &used);
      } else if (auto jt = int_keys.find(key); jt != int_keys.end()) {
        *jt->second = std::stoi(value, &used);
      } else {
        throw ParseError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::logic_error&) {
      throw ParseError("config line " + std::to_string(lineno) + ": bad value for '" + key + "'");
    }
  }
  if (cfg.dt <= 0 || cfg.wheelbase <= 0 || cfg.v_max <= 0 || cfg.camera.px <= 0 || cfg.camera.patch_mm <= 0)
    throw ParseError("config values out of range");
  return cfg;
}

// ---------------------------------------------------------------------------
// State machine

enum class NavPhase { Idle, LineFollow, Turning, AtTerminal, Picking, Dropping, Returning, Done };

inline const char* to_string(NavPhase p) {
  switch (p) {
    case NavPhase::Idle: return "IDLE";
    case NavPhase::LineFollow: return "LINE_FOLLOW";
    case NavPhase::Turning: return "TURNING";
    case NavPhase::AtTerminal: return "AT_TERMINAL";
    case NavPhase::Picking: return "PICKING";
    case NavPhase::Dropping: return "DROPPING";
    case NavPhase::Returning: return "RETURNING";
    case NavPhase::Done: return "DONE";
  }
  return "?";
}

/// Pickup: from wherever the robot waits to the source terminal.
enum class Leg { Pickup, Outbound, Inbound };

enum class NavEvent { Pick, Drop, RequestDeliveryInfo };

inline const char* to_string(NavEvent e) {
  switch (e) {
    case NavEvent::Pick: return "PICK";
    case NavEvent::Drop: return "DROP";
    case NavEvent::RequestDeliveryInfo: return "REQUEST_DELIVERY_INFO";
  }
  return "?";
}

struct NavState {
  NavPhase phase = NavPhase::Idle;
  Leg leg = Leg::Pickup;
  std::optional<RoutePlan> plan;
  std::size_t leg_cursor = 0;        ///< decisions consumed on the current leg
  std::size_t junctions_consumed = 0;
  PidState pid;
  TurnScript script;
  std::size_t script_index = 0;
  double script_elapsed = 0.0;
  NavPhase after_script = NavPhase::LineFollow;
  double since_junction_mm = std::numeric_limits<double>::infinity();
  bool picked = false;
  bool requested = false;
  std::string fault;  ///< set when the route and the observed track disagree
};

struct NavDiagnostics {
  std::optional<double> error_px;
  JunctionType junction = JunctionType::Straight;
  double steer = 0.0;
};

struct NavStepResult {
  NavState state;
  WheelSpeeds cmd;
  std::optional<NavEvent> event;
  NavDiagnostics diag;
};

/// Starts a job from IDLE (or after a completed one): follow the line to
/// the source terminal, where the object is picked.
inline NavState begin_job(NavState s) {
  if (s.phase != NavPhase::Idle && s.phase != NavPhase::Done)
    throw ContractError(std::string("cannot start a job in phase ") + to_string(s.phase));
  NavState fresh;
  fresh.phase = NavPhase::LineFollow;
  fresh.leg = Leg::Pickup;
  return fresh;
}

/// Hands the delivery route to a robot waiting after REQUEST_DELIVERY_INFO.
inline NavState accept_delivery(NavState s, RoutePlan plan) {
  if (s.phase != NavPhase::Picking || !s.requested)
    throw ContractError("delivery info accepted outside the request window");
  s.plan = std::move(plan);
  s.phase = NavPhase::AtTerminal;  // turns round onto the outbound leg
  s.leg = Leg::Outbound;
  s.leg_cursor = 0;
  s.pid = {};
  s.since_junction_mm = std::numeric_limits<double>::infinity();
  return s;
}

namespace detail {

inline const std::vector<JunctionDecision>& leg_plan(const NavState& s) {
  static const std::vector<JunctionDecision> none;
  if (!s.plan || s.leg == Leg::Pickup) return none;
  return s.leg == Leg::Outbound ? s.plan->outbound : s.plan->inbound;
}

/// Advances an open-loop script by one control period. The final partial
/// period is scaled so the integrated motion matches the nominal duration.
inline std::optional<WheelSpeeds> script_tick(NavState& s, double dt) {
  while (s.script_index < s.script.size()) {
    const ScriptSegment& seg = s.script[s.script_index];
    const double remaining = seg.duration - s.script_elapsed;
    if (remaining <= 1e-12) {
      ++s.script_index;
      s.script_elapsed = 0.0;
      continue;
    }
    if (remaining >= dt) {
      s.script_elapsed += dt;
      return seg.speeds;
    }
    const double f = remaining / dt;
    ++s.script_index;
    s.script_elapsed = 0.0;
    return WheelSpeeds{seg.speeds.left * f, seg.speeds.right * f};
  }
  return std::nullopt;
}

inline void start_script(NavState& s, TurnScript script, NavPhase phase, NavPhase after) {
  s.script = std::move(script);
  s.script_index = 0;
  s.script_elapsed = 0.0;
  s.phase = phase;
  s.after_script = after;
}

/// Forward distance (mm) from the axle to the centre of image row `row`.
inline double row_distance_mm(const OnboardCamera& cam, double row) {
  return cam.near_mm + (cam.px - row - 0.5) / cam.px_per_mm();
}

}  // namespace detail

inline BinaryImage onboard_binarize(const GrayImage& frame) {
  return morph_open(segment_otsu(gaussian_blur3(frame)).out);
}

/// One control period. `frame` is the onboard camera image.
inline NavStepResult nav_step(NavState s, const GrayImage& frame, const NavConfig& cfg) {
  NavStepResult r;
  if (frame.width() != cfg.camera.px || frame.height() != cfg.camera.px)
    throw ContractError("onboard frame must be " + std::to_string(cfg.camera.px) + "x" +
                        std::to_string(cfg.camera.px));

  switch (s.phase) {
    case NavPhase::Idle:
    case NavPhase::Done:
      r.state = std::move(s);
      return r;

    case NavPhase::Picking:
      if (!s.picked) {
        s.picked = true;
        r.event = NavEvent::Pick;
      } else if (!s.requested) {
        s.requested = true;
        r.event = NavEvent::RequestDeliveryInfo;
      }
      r.state = std::move(s);
      return r;

    case NavPhase::AtTerminal:
      // At the source: leave on the outbound leg, or finish the return.
      if (s.leg == Leg::Outbound)
        detail::start_script(s, turn_script(TurnKind::Turn180, cfg.wheelbase, cfg.turn_speed),
                             NavPhase::Turning, NavPhase::LineFollow);
      else
        s.phase = NavPhase::Done;
      r.state = std::move(s);
      return r;

    case NavPhase::Dropping:
      s.leg = Leg::Inbound;
      s.leg_cursor = 0;
      detail::start_script(s, turn_script(TurnKind::Turn180, cfg.wheelbase, cfg.turn_speed),
                           NavPhase::Returning, NavPhase::LineFollow);
      r.state = std::move(s);
      return r;

    case NavPhase::Turning:
    case NavPhase::Returning:
      if (auto cmd = detail::script_tick(s, cfg.dt)) {
        r.cmd = *cmd;
        r.state = std::move(s);
        return r;
      }
      s.script.clear();
      if (s.after_script != NavPhase::LineFollow) {
        s.phase = s.after_script;
        r.state = std::move(s);
        return r;
      }
      s.phase = NavPhase::LineFollow;
      s.pid = {};
      s.since_junction_mm = 0.0;
      break;  // follow the line in this same period

    case NavPhase::LineFollow:
      break;
  }

  // LINE_FOLLOW
  const BinaryImage bin = onboard_binarize(frame);
  const RoiSpec& roi = cfg.roi;
  const auto mass = static_cast<double>(path_mass(bin, roi));
  const BoundaryProfile profile = boundary_profile(bin, roi);
  const JunctionType type = classify_junction(profile, mass, cfg.thresholds);
  r.diag.junction = type;

  if (type == JunctionType::Terminal) {
    r.cmd = {};
    if (s.leg == Leg::Outbound) {
      s.phase = NavPhase::Dropping;
      r.event = NavEvent::Drop;
    } else if (s.leg == Leg::Pickup) {
      s.phase = NavPhase::Picking;
      s.picked = true;
      r.event = NavEvent::Pick;
    } else {
      s.phase = NavPhase::AtTerminal;
    }
    r.state = std::move(s);
    return r;
  }

  const bool armed = s.since_junction_mm >= cfg.cooldown_mm;
  const bool left_lit = profile.left > cfg.thresholds.side;
  const bool right_lit = profile.right > cfg.thresholds.side;

  if (armed && (left_lit || right_lit)) {
    // A branch is entering the ROI. Hold the heading until it lies fully
    // inside the window, then act on the settled classification.
    const auto lrun = column_run(bin, roi, roi.x0);
    const auto rrun = column_run(bin, roi, roi.x0 + roi.w - 1);
    bool settled = true;
    double row_sum = 0.0;
    int rows = 0;
    if (left_lit && lrun) {
      settled = settled && lrun->first > roi.y0;
      row_sum += (lrun->first + lrun->last) / 2.0;
      ++rows;
    }
    if (right_lit && rrun) {
      settled = settled && rrun->first > roi.y0;
      row_sum += (rrun->first + rrun->last) / 2.0;
      ++rows;
    }
    if (!settled || rows == 0) {
      r.cmd = {cfg.base_speed, cfg.base_speed};
      s.since_junction_mm += cfg.base_speed * cfg.dt;
      r.state = std::move(s);
      return r;
    }

    std::optional<Turn> turn;
    const bool continues = profile.top > cfg.thresholds.top;
    if ((type == JunctionType::LeftBranch || type == JunctionType::RightBranch) && !continues) {
      turn = type == JunctionType::LeftBranch ? Turn::Left : Turn::Right;  // corner
    } else {
      const auto& decisions = detail::leg_plan(s);
      if (s.leg_cursor >= decisions.size()) {
        s.fault = std::string("unplanned ") + to_string(type);
        s.phase = NavPhase::Done;
        r.state = std::move(s);
        return r;
      }
      turn = decisions[s.leg_cursor].turn;
      ++s.leg_cursor;
      ++s.junctions_consumed;
      const bool available = (*turn == Turn::Left && left_lit) ||
                             (*turn == Turn::Right && right_lit) ||
                             (*turn == Turn::Straight && continues);
      if (!available) {
        s.fault = std::string("planned ") + to_string(*turn) + " not available at " + to_string(type);
        s.phase = NavPhase::Done;
        r.state = std::move(s);
        return r;
      }
    }

    if (*turn == Turn::Straight) {
      s.since_junction_mm = 0.0;
    } else {
      const double ahead = detail::row_distance_mm(cfg.camera, row_sum / rows);
      TurnScript script{{{cfg.creep_speed, cfg.creep_speed}, ahead / cfg.creep_speed}};
      const auto rot = turn_script(*turn == Turn::Left ? TurnKind::Left90 : TurnKind::Right90,
                                   cfg.wheelbase, cfg.turn_speed);
      script.insert(script.end(), rot.begin(), rot.end());
      detail::start_script(s, std::move(script), NavPhase::Turning, NavPhase::LineFollow);
      r.cmd = *detail::script_tick(s, cfg.dt);
      r.state = std::move(s);
      return r;
    }
  }

  const auto err = path_error(bin, roi);
  r.diag.error_px = err;
  const PidOutput out = pid_step(cfg.gains, s.pid, err.value_or(0.0));
  s.pid = out.state;
  r.diag.steer = out.steer;
  r.cmd = wheel_command(out.steer, cfg.base_speed, cfg.k_turn, cfg.v_max);
  s.since_junction_mm += 0.5 * (std::abs(r.cmd.left + r.cmd.right)) * cfg.dt;
  r.state = std::move(s);
  return r;
}

}  // namespace agvlab
