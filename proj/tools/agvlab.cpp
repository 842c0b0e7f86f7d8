// agvlab command line: sim, dropcalc, dataset, serve, render, scene.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "agvlab/campaign.hpp"
#include "agvlab/dataset.hpp"
#include "agvlab/image_io.hpp"
#include "agvlab/services.hpp"

namespace fs = std::filesystem;
using namespace agvlab;

namespace {

enum class Level { Error = 0, Warn, Info, Debug };

Level log_level() {
  static const Level level = [] {
    const char* v = std::getenv("AGVLAB_LOG");
    const std::string s = v ? v : "info";
    if (s == "error") return Level::Error;
    if (s == "warn") return Level::Warn;
    if (s == "debug") return Level::Debug;
    return Level::Info;
  }();
  return level;
}

void log(Level l, const std::string& msg) {
  static const char* names[] = {"error", "warn", "info", "debug"};
  if (l <= log_level()) std::cerr << "agvlab " << names[static_cast<int>(l)] << ": " << msg << '\n';
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<std::string, int> host_port(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw Error("expected host:port, got '" + s + "'");
  return {s.substr(0, colon), std::stoi(s.substr(colon + 1))};
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

// Exit codes for dropcalc; they mirror the service error codes.
constexpr int kExitOk = 0, kExitUsage = 2, kExitNoZone = 3, kExitMarkers = 4, kExitAmbiguous = 5;

// ---------------------------------------------------------------------------

struct SimArgs {
  std::string scene;
  bool headless = false;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 4;
  std::string out = "agvlab-run";
  std::string host = "127.0.0.1";
  int port = 8080;
  double realtime = 1.0;
};

JobRecord record_from_state(const nlohmann::json& job, const CampaignJob& cj) {
  JobRecord r;
  r.index = cj.index;
  r.destination = cj.destination;
  r.truth = cj.truth;
  r.completed = job.at("status") == "succeeded";
  if (job.at("destination").is_number()) r.computed_destination = job["destination"].get<int>();
  if (job.at("delivered").is_object()) r.delivered = Point2{job["delivered"]["x"], job["delivered"]["y"]};
  if (job.at("error").is_string()) r.error = job["error"];
  r.steps = job.value("steps", std::size_t{0});
  r.junctions_consumed = job.value("junctions_consumed", std::size_t{0});
  r.plan_length = job.value("plan_length", std::size_t{0});
  r.pipeline_ms = job.value("pipeline_ms", 0.0);
  return r;
}

int cmd_sim(const SimArgs& a, const NavConfig& nav) {
  SceneSpec base;
  try {
    base = load_scene(a.scene);
  } catch (const std::exception& e) {
    log(Level::Error, "invalid scene: " + std::string(e.what()));
    return kExitUsage;
  }
  const std::uint64_t seed = a.seed.value_or(base.seed);
  fs::create_directories(a.out);
  std::ofstream trace(fs::path(a.out) / "trace.jsonl");
  const auto write_trace = [&trace](const TraceRecord& r) { trace << trace_to_json(r).dump() << '\n'; };
  SimConfig cfg;
  cfg.nav = nav;

  RunReport report;
  if (a.headless) {
    report = run_campaign(base, seed, a.jobs, cfg, write_trace);
  } else {
    const auto t0 = std::chrono::steady_clock::now();
    SceneStore store(base);
    CameraService camera(store);
    EdgeService edge(local_frame_source(camera));
    SimHost sim(base, cfg, [&edge](const Job& j) { return edge.provide(j); }, a.realtime);
    sim.set_trace_sink(write_trace);
    HttpServer server(ServiceSet{&store, &camera, &edge, &sim});
    server.start(a.host, a.port);
    log(Level::Info, "serving on http://" + a.host + ":" + std::to_string(a.port));
    for (std::size_t i = 0; i < a.jobs && !g_stop; ++i) {
      const CampaignJob cj = campaign_job(base, seed, i);
      store.load(cj.scene);
      const auto id = sim.submit(JobRequest{}).id;
      while (!sim.wait_idle(std::chrono::milliseconds(200)))
        if (g_stop) break;
      const auto state = sim.state();
      if (state.at("job").at("id") != id) break;
      JobRecord rec = record_from_state(state.at("job"), cj);
      score_job(rec, report.tolerance_mm);
      report.jobs.push_back(std::move(rec));
      log(Level::Debug, "job " + std::to_string(i) + ": " + state.at("job").dump());
      if (state.at("job").value("error", nlohmann::json()).is_string() && state["job"]["error"] == "step budget exceeded")
        break;
    }
    server.stop();
    report.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  const auto j = report_to_json(report);
  std::ofstream(fs::path(a.out) / "report.json") << j.dump(2) << '\n';
  std::cout << j.dump(2) << '\n';
  std::ostringstream summary;
  summary << report.succeeded() << "/" << report.jobs.size() << " jobs succeeded, mean placement error "
          << report.mean_placement_error_mm() << " mm, " << report.frames_per_second() << " frames/s onboard, "
          << report.wall_s << " s";
  log(Level::Info, summary.str());
  for (const auto& r : report.jobs)
    if (!r.success) log(Level::Warn, "job " + std::to_string(r.index) + " failed: " + r.error);
  const bool all = report.succeeded() == report.jobs.size() && report.jobs.size() == a.jobs;
  return all ? kExitOk : 1;
}

// ---------------------------------------------------------------------------

int cmd_dropcalc(const std::string& image, std::optional<int> destination) {
  auto fail = [](int code, const std::string& name, const std::string& msg, nlohmann::json extra = nlohmann::json::object()) {
    std::cout << error_body(name, msg, extra).dump() << '\n';
    log(Level::Error, msg);
    return code;
  };
  GrayImage img;
  try {
    img = load_png(image);
  } catch (const std::exception& e) {
    return fail(kExitUsage, "UNREADABLE", e.what());
  }
  DeliveryOptions opt;
  opt.destination_override = destination;
  try {
    const DeliveryInfo d = compute_delivery(img, opt);
    std::cout << delivery_to_json(d, utc_timestamp()).dump(2) << '\n';
    return kExitOk;
  } catch (const NoJobError& e) {
    return fail(kExitNoZone, "NO_DROP_ZONE", e.what());
  } catch (const AssignmentError& e) {
    return fail(kExitMarkers, "MARKERS_INSUFFICIENT", e.what(), {{"markers_detected", e.markers_detected()}});
  } catch (const AmbiguityError& e) {
    return fail(kExitAmbiguous, "AMBIGUOUS", e.what(), {{"destinations", e.destinations()}});
  } catch (const std::exception& e) {
    return fail(kExitUsage, "FAILED", e.what());
  }
}

// ---------------------------------------------------------------------------

int cmd_dataset(const std::string& master_path, const std::string& label_path, const std::string& out,
                const AugmentationSpec& spec) {
  try {
    const GrayImage master = load_png(master_path);
    const BinaryImage label = label_from_gray(load_png(label_path));
    const auto manifest = write_dataset(out, master, label, spec);
    std::cout << nlohmann::json{{"dir", out},
                                {"train_count", spec.train_count},
                                {"test_count", spec.test_count},
                                {"pairs", manifest.at("pairs").size()}}
                     .dump(2)
              << '\n';
    log(Level::Info, "wrote " + std::to_string(manifest.at("pairs").size()) + " pairs to " + out);
    return kExitOk;
  } catch (const std::exception& e) {
    log(Level::Error, e.what());
    return kExitUsage;
  }
}

// ---------------------------------------------------------------------------

struct ServeArgs {
  std::string scene;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> roles{"camera", "edge", "sim"};
  std::string camera_url;
  std::string edge_url;
  double realtime = 1.0;
};

int cmd_serve(const ServeArgs& a, const NavConfig& nav) {
  auto has = [&](const char* r) { return std::find(a.roles.begin(), a.roles.end(), r) != a.roles.end(); };
  for (const auto& r : a.roles)
    if (r != "camera" && r != "edge" && r != "sim") {
      log(Level::Error, "unknown role '" + r + "'");
      return kExitUsage;
    }
  std::optional<SceneSpec> scene;
  if (!a.scene.empty()) {
    try {
      scene = load_scene(a.scene);
    } catch (const std::exception& e) {
      log(Level::Error, "invalid scene: " + std::string(e.what()));
      return kExitUsage;
    }
  }
  if (has("sim") && !scene) {
    log(Level::Error, "the sim role needs --scene");
    return kExitUsage;
  }

  try {
    SceneStore store;
    if (scene) store.load(*scene);
    CameraService camera(store);
    std::unique_ptr<EdgeService> edge;
    if (has("edge")) {
      if (!a.camera_url.empty()) {
        const auto [h, p] = host_port(a.camera_url);
        edge = std::make_unique<EdgeService>(remote_frame_source(h, p));
      } else {
        edge = std::make_unique<EdgeService>(local_frame_source(camera));
      }
    }
    std::unique_ptr<SimHost> sim;
    if (has("sim")) {
      DeliveryProvider provider;
      if (!a.edge_url.empty()) {
        const auto [h, p] = host_port(a.edge_url);
        provider = remote_delivery_provider(h, p);
      } else if (edge) {
        provider = [e = edge.get()](const Job& j) { return e->provide(j); };
      } else {
        log(Level::Error, "the sim role needs the edge role or --edge-url");
        return kExitUsage;
      }
      SimConfig cfg;
      cfg.nav = nav;
      sim = std::make_unique<SimHost>(*scene, cfg, provider, a.realtime);
    }
    const bool cam = has("camera");
    HttpServer server(ServiceSet{cam ? &store : nullptr, cam ? &camera : nullptr, edge.get(), sim.get()});
    server.start(a.host, a.port);
    log(Level::Info, "serving on http://" + a.host + ":" + std::to_string(a.port));
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    return kExitOk;
  } catch (const std::exception& e) {
    log(Level::Error, e.what());
    return 1;
  }
}

// ---------------------------------------------------------------------------

int cmd_render(const std::string& scene_path, const std::string& out, const std::string& label_out) {
  try {
    const SceneSpec s = load_scene(scene_path);
    save_png(out, render_overhead(s).image);
    if (!label_out.empty()) save_png(label_out, binary_to_gray(render_overhead_label(s)));
    return kExitOk;
  } catch (const std::exception& e) {
    log(Level::Error, e.what());
    return kExitUsage;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"agvlab: line-following AGV lab simulator, edge services and tools"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "navigation config file (key = value lines)")->check(CLI::ExistingFile);

  SimArgs sim_args;
  auto* sim = app.add_subcommand("sim", "run pick-deliver-return jobs and write trace.jsonl and report.json");
  sim->add_option("scene", sim_args.scene, "scene JSON")->required();
  sim->add_flag("--headless", sim_args.headless, "run without the HTTP services, as fast as possible");
  sim->add_option("--seed", sim_args.seed, "campaign seed (default: scene seed)");
  sim->add_option("--jobs", sim_args.jobs, "number of jobs")->capture_default_str();
  sim->add_option("--out", sim_args.out, "output directory")->capture_default_str();
  sim->add_option("--host", sim_args.host, "bind address when not headless")->capture_default_str();
  sim->add_option("--port", sim_args.port, "port when not headless")->capture_default_str();
  sim->add_option("--realtime", sim_args.realtime, "pace factor when not headless, 0 = unpaced")->capture_default_str();

  std::string image;
  std::optional<int> destination;
  auto* drop = app.add_subcommand("dropcalc", "compute the delivery for an overhead PNG; JSON on stdout");
  drop->add_option("image", image, "overhead grayscale PNG")->required();
  drop->add_option("--destination", destination, "restrict to one destination")->check(CLI::Range(0, kDestinations - 1));

  std::string master, label, ds_out = "dataset";
  AugmentationSpec spec;
  auto* ds = app.add_subcommand("dataset", "generate augmented train/test pairs");
  ds->add_option("master", master, "master image PNG")->required();
  ds->add_option("label", label, "master label PNG (foreground >= 128)")->required();
  ds->add_option("--train", spec.train_count, "train pairs")->capture_default_str();
  ds->add_option("--test", spec.test_count, "test pairs")->capture_default_str();
  ds->add_option("--seed", spec.seed, "RNG seed")->capture_default_str();
  ds->add_option("--size", spec.output_size, "output side in px")->capture_default_str();
  ds->add_option("--out", ds_out, "output directory")->capture_default_str();

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "host the HTTP services");
  serve->add_option("--scene", serve_args.scene, "scene JSON");
  serve->add_option("--host", serve_args.host)->capture_default_str();
  serve->add_option("--port", serve_args.port)->capture_default_str();
  serve->add_option("--roles", serve_args.roles, "camera, edge, sim")->delimiter(',')->capture_default_str();
  serve->add_option("--camera-url", serve_args.camera_url, "host:port of a remote camera service for the edge role");
  serve->add_option("--edge-url", serve_args.edge_url, "host:port of a remote edge service for the sim role");
  serve->add_option("--realtime", serve_args.realtime, "sim pace factor, 0 = unpaced")->capture_default_str();

  std::string render_scene, render_out = "frame.png", render_label;
  auto* render = app.add_subcommand("render", "write the overhead frame (and label mask) of a scene");
  render->add_option("scene", render_scene)->required();
  render->add_option("--out", render_out)->capture_default_str();
  render->add_option("--label", render_label, "also write the ground-truth label PNG");

  auto* scene = app.add_subcommand("scene", "print the default scene JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  NavConfig nav;
  if (!config_path.empty()) {
    try {
      nav = parse_nav_config(read_text(config_path));
    } catch (const std::exception& e) {
      log(Level::Error, "bad config: " + std::string(e.what()));
      return kExitUsage;
    }
  }

  if (*sim) return cmd_sim(sim_args, nav);
  if (*drop) return cmd_dropcalc(image, destination);
  if (*ds) return cmd_dataset(master, label, ds_out, spec);
  if (*serve) return cmd_serve(serve_args, nav);
  if (*render) return cmd_render(render_scene, render_out, render_label);
  if (*scene) {
    std::cout << scene_to_json(default_scene()).dump(2) << '\n';
    return kExitOk;
  }
  return kExitUsage;
}
