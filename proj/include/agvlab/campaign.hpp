#pragma once

// Batches of randomized end-to-end jobs and the run report.

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "agvlab/geometry.hpp"
#include "agvlab/perception.hpp"
#include "agvlab/simworld.hpp"
#include "json.hpp"

namespace agvlab {

struct CampaignJob {
  std::size_t index = 0;
  int destination = 0;
  SceneSpec scene;  ///< base scene with this job's drop zone and lighting
  Polygon zone;     ///< world mm
  Point2 truth;     ///< pole of the zone
};

/// Job i of a campaign. A base scene without drop zones gets one random
/// zone per job, destinations cycling 0,1,2,3; otherwise the scene's own
/// zones are used unchanged. Lighting and noise are redrawn per job.
inline CampaignJob campaign_job(const SceneSpec& base, std::uint64_t seed, std::size_t i) {
  CampaignJob job;
  job.index = i;
  job.scene = base;
  std::mt19937_64 rng(detail::mix_seed(seed, i + 1));
  std::uniform_real_distribution<double> gain(0.85, 1.15), sigma(2.0, 4.0);
  job.scene.seed = detail::mix_seed(seed, 1000 + i);
  job.scene.lighting.gain = gain(rng);
  job.scene.lighting.noise_sigma = sigma(rng);
  if (base.drop_zones.empty()) {
    job.destination = static_cast<int>(i % kDestinations);
    job.zone = random_drop_zone(rng, job.destination);
    job.scene.drop_zones = {{job.destination, job.zone}};
  } else {
    job.destination = base.drop_zones.front().destination;
    job.zone = base.drop_zones.front().polygon;
  }
  const DropPoint p = polylabel(job.zone, 0.05);
  job.truth = {p.x, p.y};
  return job;
}

struct JobRecord {
  std::size_t index = 0;
  int destination = 0;
  std::optional<int> computed_destination;
  std::optional<Point2> delivered;
  Point2 truth;
  double placement_error_mm = std::numeric_limits<double>::quiet_NaN();
  bool completed = false;
  bool success = false;
  std::string error;
  std::size_t steps = 0;
  std::size_t junctions_consumed = 0;
  std::size_t plan_length = 0;
  double pipeline_ms = 0.0;  ///< onboard processing, all frames of the job
  double delivery_ms = 0.0;  ///< overhead pipeline for the delivery request
};

/// Fills success and placement error from the delivered point.
inline void score_job(JobRecord& r, double tolerance_mm) {
  if (r.delivered) r.placement_error_mm = distance(*r.delivered, r.truth);
  r.success = r.completed && r.delivered && r.computed_destination == r.destination &&
              r.placement_error_mm <= tolerance_mm;
  if (r.completed && !r.success && r.error.empty())
    r.error = "placement error " + std::to_string(r.placement_error_mm) + " mm";
}

struct RunReport {
  std::vector<JobRecord> jobs;
  double tolerance_mm = 10.0;
  double wall_s = 0.0;

  std::size_t succeeded() const {
    return static_cast<std::size_t>(std::count_if(jobs.begin(), jobs.end(), [](const auto& j) { return j.success; }));
  }
  double success_rate() const { return jobs.empty() ? 0.0 : static_cast<double>(succeeded()) / jobs.size(); }
  double mean_placement_error_mm() const {
    double s = 0;
    int n = 0;
    for (const auto& j : jobs)
      if (j.delivered) s += j.placement_error_mm, ++n;
    return n ? s / n : 0.0;
  }
  /// Planned decisions executed by jobs that completed, over all planned.
  double junction_success_rate() const {
    double ok = 0, all = 0;
    for (const auto& j : jobs) {
      all += static_cast<double>(j.plan_length);
      if (j.completed && j.junctions_consumed == j.plan_length) ok += static_cast<double>(j.plan_length);
    }
    return all > 0 ? ok / all : (jobs.empty() ? 0.0 : 1.0);
  }
  std::size_t frames() const {
    std::size_t n = 0;
    for (const auto& j : jobs) n += j.steps;
    return n;
  }
  double mean_pipeline_latency_ms() const {
    double ms = 0;
    for (const auto& j : jobs) ms += j.pipeline_ms;
    return frames() ? ms / static_cast<double>(frames()) : 0.0;
  }
  double frames_per_second() const {
    const double ms = mean_pipeline_latency_ms();
    return ms > 0 ? 1000.0 / ms : 0.0;
  }
  double mean_delivery_ms() const {
    double ms = 0;
    for (const auto& j : jobs) ms += j.delivery_ms;
    return jobs.empty() ? 0.0 : ms / static_cast<double>(jobs.size());
  }
};

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json jobs = nlohmann::json::array();
  for (const auto& j : r.jobs) {
    nlohmann::json e{{"index", j.index},
                     {"destination", j.destination},
                     {"truth_mm", {{"x", j.truth.x}, {"y", j.truth.y}}},
                     {"completed", j.completed},
                     {"success", j.success},
                     {"steps", j.steps},
                     {"junctions_consumed", j.junctions_consumed},
                     {"plan_length", j.plan_length},
                     {"pipeline_ms", j.pipeline_ms},
                     {"delivery_ms", j.delivery_ms}};
    e["computed_destination"] = j.computed_destination ? nlohmann::json(*j.computed_destination) : nlohmann::json();
    e["delivered_mm"] =
        j.delivered ? nlohmann::json{{"x", j.delivered->x}, {"y", j.delivered->y}} : nlohmann::json();
    e["placement_error_mm"] = j.delivered ? nlohmann::json(j.placement_error_mm) : nlohmann::json();
    e["error"] = j.error.empty() ? nlohmann::json() : nlohmann::json(j.error);
    jobs.push_back(std::move(e));
  }
  return {{"report_version", 1},
          {"jobs_attempted", r.jobs.size()},
          {"jobs_succeeded", r.succeeded()},
          {"success_rate", r.success_rate()},
          {"tolerance_mm", r.tolerance_mm},
          {"mean_placement_error_mm", r.mean_placement_error_mm()},
          {"junction_success_rate", r.junction_success_rate()},
          {"mean_pipeline_latency_ms", r.mean_pipeline_latency_ms()},
          {"frames_processed", r.frames()},
          {"frames_per_second", r.frames_per_second()},
          {"mean_delivery_ms", r.mean_delivery_ms()},
          {"wall_s", r.wall_s},
          {"jobs", jobs}};
}

/// Runs `n` campaign jobs back to back in one simulator, computing each
/// delivery from the rendered overhead frame.
inline RunReport run_campaign(const SceneSpec& base, std::uint64_t seed, std::size_t n, const SimConfig& cfg = {},
                              const std::function<void(const TraceRecord&)>& trace = {},
                              double tolerance_mm = 10.0) {
  const auto t0 = std::chrono::steady_clock::now();
  RunReport report;
  report.tolerance_mm = tolerance_mm;
  Simulator sim(base, cfg);
  if (trace) sim.set_observer(trace);
  for (std::size_t i = 0; i < n; ++i) {
    const CampaignJob job = campaign_job(base, seed, i);
    JobRecord rec;
    rec.index = i;
    rec.destination = job.destination;
    rec.truth = job.truth;
    const DeliveryProvider provider = [&](const Job& j) {
      const auto d0 = std::chrono::steady_clock::now();
      DeliveryOptions opt;
      opt.destination_override = j.destination_override;
      const DeliveryInfo info = compute_delivery(render_overhead(job.scene).image, opt);
      rec.delivery_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - d0).count();
      return info;
    };
    const JobOutcome out = sim.run_job(Job{}, provider, i);
    if (out.delivery) rec.computed_destination = out.delivery->destination;
    rec.delivered = out.delivered;
    rec.completed = out.completed;
    rec.error = out.error;
    rec.steps = out.steps;
    rec.junctions_consumed = out.junctions_consumed;
    rec.plan_length = out.plan_length;
    rec.pipeline_ms = out.pipeline_ms;
    score_job(rec, tolerance_mm);
    report.jobs.push_back(std::move(rec));
    if (out.timeout) break;  // the robot is stranded; later jobs cannot run
  }
  report.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

}  // namespace agvlab
