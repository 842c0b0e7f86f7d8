#pragma once

// HTTP wire layer: camera frame service, edge delivery endpoint and the
// simulation control endpoints. The four roles are independent objects so
// they can live in one process or in separate ones.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "agvlab/delivery.hpp"
#include "agvlab/error.hpp"
#include "agvlab/image_io.hpp"
#include "agvlab/perception.hpp"
#include "agvlab/simworld.hpp"
#include "httplib.h"
#include "json.hpp"

namespace agvlab {

inline constexpr const char* kSchemaHeader = "X-AGVLab-Schema";
inline constexpr const char* kSchemaVersion = "1";

/// An error that maps onto one HTTP status and a stable code.
class ApiError : public Error {
 public:
  ApiError(int status, std::string code, const std::string& what, nlohmann::json extra = nlohmann::json::object())
      : Error(what), status_(status), code_(std::move(code)), extra_(std::move(extra)) {}
  int status() const noexcept { return status_; }
  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& extra() const noexcept { return extra_; }

 private:
  int status_;
  std::string code_;
  nlohmann::json extra_;
};

inline nlohmann::json error_body(const std::string& code, const std::string& message,
                                 const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j{{"code", code}, {"message", message}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

// ---------------------------------------------------------------------------
// Scene store: single writer, every mutation bumps the revision.

class SceneStore {
 public:
  struct Snapshot {
    std::shared_ptr<const SceneSpec> scene;
    std::uint64_t revision = 0;
  };

  SceneStore() = default;
  explicit SceneStore(SceneSpec scene) { load(std::move(scene)); }

  Snapshot snapshot() const {
    std::lock_guard lock(m_);
    return {scene_, revision_};
  }

  std::uint64_t load(SceneSpec scene) {
    const auto problems = validate_scene(scene);
    if (!problems.empty()) throw ContractError("invalid scene: " + problems.front());
    auto p = std::make_shared<const SceneSpec>(std::move(scene));
    std::lock_guard lock(m_);
    scene_ = std::move(p);
    return ++revision_;
  }

  /// 422 INVALID_POLYGON or 409 OVERLAP; 503 NO_SCENE without a scene.
  std::uint64_t add_drop_zone(const DropZone& zone) {
    std::vector<std::string> problems;
    if (zone.destination < 0 || zone.destination >= kDestinations) problems.push_back("destination must be 0..3");
    for (auto v : zone.polygon.vertices)
      if (!std::isfinite(v.x) || !std::isfinite(v.y)) problems.push_back("vertex coordinates must be finite");
    if (problems.empty() && !is_simple(zone.polygon)) problems.push_back("polygon is not simple");
    if (problems.empty())
      for (auto v : zone.polygon.vertices)
        if (!inside_destination(v, zone.destination)) {
          problems.push_back("polygon leaves destination " + std::to_string(zone.destination));
          break;
        }
    if (!problems.empty())
      throw ApiError(422, "INVALID_POLYGON", problems.front(), {{"detail", problems}});

    std::lock_guard lock(m_);
    if (!scene_) throw ApiError(503, "NO_SCENE", "no scene loaded");
    for (const auto& z : scene_->drop_zones)
      if (polygons_overlap(z.polygon, zone.polygon))
        throw ApiError(409, "OVERLAP", "polygon overlaps an existing drop zone",
                       {{"destination", z.destination}});
    SceneSpec next = *scene_;
    next.drop_zones.push_back({zone.destination, make_ccw(zone.polygon)});
    scene_ = std::make_shared<const SceneSpec>(std::move(next));
    return ++revision_;
  }

 private:
  mutable std::mutex m_;
  std::shared_ptr<const SceneSpec> scene_;
  std::uint64_t revision_ = 0;
};

// ---------------------------------------------------------------------------
// Camera role

struct EncodedFrame {
  std::shared_ptr<const std::string> png;
  std::uint64_t revision = 0;
  std::uint64_t seed = 0;
};

/// Renders the overhead view once per scene revision.
class CameraService {
 public:
  explicit CameraService(const SceneStore& store) : store_(store) {}

  std::optional<EncodedFrame> frame() {
    const auto snap = store_.snapshot();
    if (!snap.scene) return std::nullopt;
    {
      std::lock_guard lock(m_);
      if (cached_.png && cached_.revision == snap.revision) return cached_;
    }
    const auto img = render_overhead(*snap.scene).image;
    EncodedFrame f{std::make_shared<const std::string>(encode_png_string(img)), snap.revision, snap.scene->seed};
    std::lock_guard lock(m_);
    if (!cached_.png || cached_.revision < f.revision) cached_ = f;
    return f;
  }

 private:
  static std::string encode_png_string(const GrayImage& img) {
    const auto bytes = encode_png(img);
    return std::string(bytes.begin(), bytes.end());
  }

  const SceneStore& store_;
  std::mutex m_;
  EncodedFrame cached_;
};

// ---------------------------------------------------------------------------
// Edge role

class CameraDownError : public Error {
 public:
  using Error::Error;
};

/// Returns PNG bytes of the current overhead frame; throws CameraDownError.
using FrameSource = std::function<std::string()>;

inline FrameSource local_frame_source(CameraService& cam) {
  return [&cam] {
    auto f = cam.frame();
    if (!f) throw CameraDownError("camera has no scene");
    return *f->png;
  };
}

inline FrameSource remote_frame_source(std::string host, int port) {
  return [host = std::move(host), port] {
    httplib::Client cli(host, port);
    cli.set_connection_timeout(2);
    cli.set_read_timeout(10);
    auto res = cli.Get("/api/v1/frame");
    if (!res) throw CameraDownError("camera unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw CameraDownError("camera returned HTTP " + std::to_string(res->status));
    return res->body;
  };
}

struct HttpReply {
  int status = 200;
  std::string body;
};

/// Delivery computation cached per frame content; a repeated request for
/// an unchanged scene returns the identical bytes.
class EdgeService {
 public:
  using Clock = std::function<std::chrono::system_clock::time_point()>;

  explicit EdgeService(FrameSource source, DeliveryOptions opt = {}, Clock clock = {})
      : source_(std::move(source)), opt_(std::move(opt)), clock_(std::move(clock)) {
    if (!clock_) clock_ = [] { return std::chrono::system_clock::now(); };
  }

  HttpReply delivery(std::optional<int> override_dest = std::nullopt) {
    std::string png;
    try {
      png = source_();
    } catch (const CameraDownError& e) {
      return {502, error_body("CAMERA_DOWN", e.what()).dump()};
    }
    const std::string key = std::to_string(std::hash<std::string>{}(png)) + ":" + std::to_string(png.size()) + ":" +
                            (override_dest ? std::to_string(*override_dest) : "-");
    {
      std::lock_guard lock(m_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    HttpReply reply = compute(png, override_dest);
    std::lock_guard lock(m_);
    if (cache_.size() > 64) cache_.clear();
    return cache_.emplace(key, std::move(reply)).first->second;
  }

  /// Provider for the simulator: the delivery for `job`, or throws.
  DeliveryInfo provide(const Job& job) {
    const HttpReply r = delivery(job.destination_override);
    const auto j = nlohmann::json::parse(r.body);
    if (r.status != 200) throw ApiError(r.status, j.value("code", "ERROR"), j.value("message", ""));
    return delivery_from_json(j);
  }

 private:
  HttpReply compute(const std::string& png, std::optional<int> override_dest) {
    DeliveryOptions opt = opt_;
    opt.destination_override = override_dest;
    try {
      const GrayImage img = decode_png(std::vector<std::uint8_t>(png.begin(), png.end()));
      return {200, delivery_to_json(compute_delivery(img, opt), utc_timestamp(clock_())).dump()};
    } catch (const AssignmentError& e) {
      return {503, error_body("MARKERS_INSUFFICIENT", e.what(), {{"markers_detected", e.markers_detected()}}).dump()};
    } catch (const NoJobError& e) {
      return {404, error_body("NO_DROP_ZONE", e.what()).dump()};
    } catch (const AmbiguityError& e) {
      return {409, error_body("AMBIGUOUS", e.what(), {{"destinations", e.destinations()}}).dump()};
    } catch (const ExtractionError& e) {
      return {422, error_body("EXTRACTION_FAILED", e.what(), {{"components", e.components()}}).dump()};
    } catch (const ParseError& e) {
      return {502, error_body("CAMERA_DOWN", std::string("undecodable frame: ") + e.what()).dump()};
    }
  }

  FrameSource source_;
  DeliveryOptions opt_;
  Clock clock_;
  std::mutex m_;
  std::map<std::string, HttpReply> cache_;
};

// ---------------------------------------------------------------------------
// Simulation role

struct JobRequest {
  std::optional<int> destination;
  std::optional<std::string> idempotency_key;
};

inline JobRequest job_request_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("job request must be an object");
  JobRequest r;
  for (const auto& [k, v] : j.items()) {
    if (k == "destination") {
      if (v.is_null()) continue;
      if (!v.is_number_integer()) throw ParseError("destination must be an integer");
      const auto d = v.get<std::int64_t>();
      if (d < 0 || d >= kDestinations) throw DomainError("destination must be 0..3");
      r.destination = static_cast<int>(d);
    } else if (k == "idempotency_key") {
      if (!v.is_string() || v.get<std::string>().empty()) throw ParseError("idempotency_key must be a non-empty string");
      r.idempotency_key = v.get<std::string>();
    } else {
      throw ParseError("unknown key '" + k + "'");
    }
  }
  return r;
}

/// Owns a Simulator and runs submitted jobs on a worker thread, one at a
/// time. State snapshots are published between sim steps.
class SimHost {
 public:
  /// realtime: 0 runs as fast as possible, 1 paces steps at the control rate.
  SimHost(SceneSpec scene, SimConfig cfg, DeliveryProvider provider, double realtime = 0.0)
      : sim_(std::move(scene), std::move(cfg)), provider_(std::move(provider)), realtime_(realtime) {
    sim_.set_observer([this](const TraceRecord& r) { on_step(r); });
    publish_idle();
    worker_ = std::thread([this] { run(); });
  }
  SimHost(const SimHost&) = delete;
  SimHost& operator=(const SimHost&) = delete;
  ~SimHost() {
    {
      std::lock_guard lock(m_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }

  struct Submitted {
    int id = 0;
    bool created = false;
  };

  /// 409 BUSY while a job is queued or running; a repeated idempotency key
  /// returns the original id.
  Submitted submit(const JobRequest& req) {
    std::lock_guard lock(m_);
    if (req.idempotency_key)
      if (auto it = keys_.find(*req.idempotency_key); it != keys_.end()) return {it->second, false};
    if (pending_ || running_) throw ApiError(409, "BUSY", "a job is already active", {{"active_job", current_id_}});
    const int id = ++last_id_;
    if (req.idempotency_key) keys_[*req.idempotency_key] = id;
    pending_ = req;
    current_id_ = id;
    job_ = {{"id", id},
             {"status", "queued"},
             {"destination_override", req.destination ? nlohmann::json(*req.destination) : nlohmann::json(nullptr)},
             {"destination", nullptr},
             {"delivered", nullptr},
             {"error", nullptr},
             {"phases", nlohmann::json::array()}};
    cv_.notify_all();
    return {id, true};
  }

  nlohmann::json state() const {
    std::lock_guard lock(m_);
    nlohmann::json s = snapshot_;
    s["job"] = job_;
    s["jobs_completed"] = jobs_completed_;
    return s;
  }

  /// Called from the worker for every sim step; set before submitting.
  void set_trace_sink(std::function<void(const TraceRecord&)> sink) {
    std::lock_guard lock(m_);
    sink_ = std::move(sink);
  }

  /// Blocks until no job is queued or running, or the timeout passes.
  bool wait_idle(std::chrono::milliseconds timeout) {
    std::unique_lock lock(m_);
    return idle_cv_.wait_for(lock, timeout, [this] { return !pending_ && !running_; });
  }

 private:
  struct Stopped {};

  void publish_idle() {
    const auto& p = sim_.pose();
    snapshot_ = {{"pose", {{"x", p.x}, {"y", p.y}, {"heading", p.heading}}},
                 {"state", to_string(sim_.nav().phase)},
                 {"step", sim_.steps()},
                 {"last_event", nullptr}};
  }

  void on_step(const TraceRecord& r) {
    if (realtime_ > 0) {
      next_tick_ += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
          std::chrono::duration<double>(r.step == 0 ? 0.0 : 1.0 / 30.0 / realtime_));
      std::this_thread::sleep_until(next_tick_);
    }
    std::lock_guard lock(m_);
    if (stop_) throw Stopped{};
    if (sink_) sink_(r);
    snapshot_["pose"] = {{"x", r.pose.x}, {"y", r.pose.y}, {"heading", r.pose.heading}};
    snapshot_["state"] = to_string(r.phase);
    snapshot_["step"] = r.step;
    if (r.event) snapshot_["last_event"] = to_string(*r.event);
    auto& phases = job_["phases"];
    if (phases.empty() || phases.back().at("state") != to_string(r.phase))
      phases.push_back({{"state", to_string(r.phase)}, {"step", r.step}});
  }

  void run() {
    for (;;) {
      JobRequest req;
      int id = 0;
      {
        std::unique_lock lock(m_);
        cv_.wait(lock, [this] { return stop_ || pending_.has_value(); });
        if (stop_) return;
        req = *pending_;
        pending_.reset();
        running_ = true;
        id = current_id_;
        job_["status"] = "running";
        job_["phases"].push_back({{"state", to_string(sim_.nav().phase)}, {"step", sim_.steps()}});
      }
      next_tick_ = std::chrono::steady_clock::now();
      JobOutcome out;
      try {
        out = sim_.run_job(Job{req.destination}, provider_, static_cast<std::size_t>(id - 1));
      } catch (const Stopped&) {
        return;
      } catch (const std::exception& e) {
        out.error = e.what();
      }
      std::lock_guard lock(m_);
      job_["status"] = out.completed ? "succeeded" : "failed";
      if (out.delivery) job_["destination"] = out.delivery->destination;
      if (out.delivered) job_["delivered"] = {{"x", out.delivered->x}, {"y", out.delivered->y}};
      if (!out.error.empty()) job_["error"] = out.error;
      job_["steps"] = out.steps;
      job_["junctions_consumed"] = out.junctions_consumed;
      job_["plan_length"] = out.plan_length;
      job_["pipeline_ms"] = out.pipeline_ms;
      ++jobs_completed_;
      running_ = false;
      idle_cv_.notify_all();
    }
  }

  Simulator sim_;
  DeliveryProvider provider_;
  double realtime_;
  std::chrono::steady_clock::time_point next_tick_;
  std::thread worker_;

  mutable std::mutex m_;
  std::condition_variable cv_, idle_cv_;
  bool stop_ = false;
  bool running_ = false;
  std::optional<JobRequest> pending_;
  int last_id_ = 0;
  int current_id_ = 0;
  std::map<std::string, int> keys_;
  nlohmann::json snapshot_;
  nlohmann::json job_ = nullptr;
  std::size_t jobs_completed_ = 0;
  std::function<void(const TraceRecord&)> sink_;
};

/// Job provider that asks a remote edge service.
inline DeliveryProvider remote_delivery_provider(std::string host, int port) {
  return [host = std::move(host), port](const Job& job) {
    httplib::Client cli(host, port);
    cli.set_connection_timeout(2);
    cli.set_read_timeout(30);
    std::string path = "/api/v1/delivery";
    if (job.destination_override) path += "?destination=" + std::to_string(*job.destination_override);
    auto res = cli.Get(path);
    if (!res) throw Error("edge unreachable: " + httplib::to_string(res.error()));
    const auto j = nlohmann::json::parse(res->body);
    if (res->status != 200) throw ApiError(res->status, j.value("code", "ERROR"), j.value("message", ""));
    return delivery_from_json(j);
  };
}

// ---------------------------------------------------------------------------
// Routes

/// Any role may be null; its endpoints then answer 404 like unknown paths.
struct ServiceSet {
  SceneStore* scene = nullptr;
  CameraService* camera = nullptr;
  EdgeService* edge = nullptr;
  SimHost* sim = nullptr;
};

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

inline void send_error(httplib::Response& res, const ApiError& e) {
  send_json(res, e.status(), error_body(e.code(), e.what(), e.extra()));
}

inline nlohmann::json parse_body(const httplib::Request& req) {
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw ApiError(400, "BAD_REQUEST", std::string("body is not valid JSON: ") + e.what());
  }
}

}  // namespace detail

inline void register_routes(httplib::Server& srv, const ServiceSet& s) {
  srv.set_default_headers({{kSchemaHeader, kSchemaVersion}, {"Access-Control-Allow-Origin", "*"}});

  srv.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
    const std::string code = res.status == 404 ? "NOT_FOUND" : "HTTP_" + std::to_string(res.status);
    res.set_content(error_body(code, req.method + " " + req.path + " failed").dump(), "application/json");
    return httplib::Server::HandlerResponse::Handled;
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const ApiError& e) {
      detail::send_error(res, e);
    } catch (const ParseError& e) {
      detail::send_json(res, 400, error_body("BAD_REQUEST", e.what()));
    } catch (const DomainError& e) {
      detail::send_json(res, 422, error_body("INVALID_REQUEST", e.what()));
    } catch (const std::exception& e) {
      detail::send_json(res, 500, error_body("INTERNAL", e.what()));
    } catch (...) {
      detail::send_json(res, 500, error_body("INTERNAL", "unknown error"));
    }
  });
  srv.Options(R"(/api/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });

  if (s.scene) {
    SceneStore* store = s.scene;
    srv.Get("/api/v1/scene", [store](const httplib::Request&, httplib::Response& res) {
      const auto snap = store->snapshot();
      if (!snap.scene) throw ApiError(503, "NO_SCENE", "no scene loaded");
      res.set_header("X-AGVLab-Revision", std::to_string(snap.revision));
      detail::send_json(res, 200, scene_to_json(*snap.scene));
    });
    srv.Post("/api/v1/dropzone", [store](const httplib::Request& req, httplib::Response& res) {
      const auto j = detail::parse_body(req);
      if (!j.is_object() || !j.contains("destination") || !j.contains("polygon"))
        throw ApiError(400, "BAD_REQUEST", "body needs destination and polygon");
      if (!j["destination"].is_number_integer())
        throw ApiError(422, "INVALID_POLYGON", "destination must be an integer");
      DropZone z;
      z.destination = j["destination"].get<int>();
      try {
        z.polygon = polygon_from_json(j["polygon"]);
      } catch (const ParseError& e) {
        throw ApiError(422, "INVALID_POLYGON", e.what(), {{"detail", {e.what()}}});
      }
      const auto rev = store->add_drop_zone(z);
      const auto snap = store->snapshot();
      res.set_header("X-AGVLab-Revision", std::to_string(rev));
      detail::send_json(res, 201,
                        {{"revision", rev}, {"destination", z.destination}, {"zones", snap.scene->drop_zones.size()}});
    });
  }

  if (s.camera) {
    CameraService* cam = s.camera;
    srv.Get("/api/v1/frame", [cam](const httplib::Request&, httplib::Response& res) {
      const auto f = cam->frame();
      if (!f) throw ApiError(503, "NO_SCENE", "no scene loaded");
      res.set_header("X-AGVLab-Seed", std::to_string(f->seed));
      res.set_header("X-AGVLab-Revision", std::to_string(f->revision));
      res.set_content(*f->png, "image/png");
    });
  }

  if (s.edge) {
    EdgeService* edge = s.edge;
    srv.Get("/api/v1/delivery", [edge](const httplib::Request& req, httplib::Response& res) {
      std::optional<int> dest;
      if (req.has_param("destination")) {
        const std::string v = req.get_param_value("destination");
        if (v.size() != 1 || v[0] < '0' || v[0] >= '0' + kDestinations)
          throw ApiError(400, "BAD_REQUEST", "destination must be 0..3");
        dest = v[0] - '0';
      }
      const HttpReply r = edge->delivery(dest);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    });
  }

  if (s.sim) {
    SimHost* sim = s.sim;
    srv.Post("/api/v1/job", [sim](const httplib::Request& req, httplib::Response& res) {
      const JobRequest jr = job_request_from_json(req.body.empty() ? nlohmann::json::object() : detail::parse_body(req));
      const auto sub = sim->submit(jr);
      detail::send_json(res, 202, {{"id", sub.id}, {"created", sub.created}});
    });
    srv.Get("/api/v1/state", [sim](const httplib::Request&, httplib::Response& res) {
      detail::send_json(res, 200, sim->state());
    });
  }
}

/// httplib server on a background thread.
class HttpServer {
 public:
  explicit HttpServer(const ServiceSet& services) { register_routes(srv_, services); }
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;
  ~HttpServer() { stop(); }

  /// Binds (port 0 picks a free one) and starts serving; returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    if (port == 0) {
      port_ = srv_.bind_to_any_port(host);
    } else if (srv_.bind_to_port(host, port)) {
      port_ = port;
    } else {
      port_ = -1;
    }
    if (port_ < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { srv_.listen_after_bind(); });
    srv_.wait_until_ready();
    return port_;
  }

  /// Blocks in the calling thread.
  void run(const std::string& host, int port) {
    if (!srv_.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
  }

  void stop() {
    srv_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }
  httplib::Server& raw() noexcept { return srv_; }

 private:
  httplib::Server srv_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace agvlab
