#pragma once

// Delivery information and its wire form.

#include <chrono>
#include <cmath>
#include <ctime>
#include <string>

#include "agvlab/error.hpp"
#include "json.hpp"

namespace agvlab {

struct DeliveryInfo {
  int destination = 0;
  double drop_x_mm = 0.0;
  double drop_y_mm = 0.0;
  double clearance_mm = 0.0;  ///< inscribed radius at the drop point
  int markers_detected = 0;
  friend bool operator==(const DeliveryInfo&, const DeliveryInfo&) = default;
};

/// RFC 3339 UTC timestamp with second resolution.
inline std::string utc_timestamp(std::chrono::system_clock::time_point t = std::chrono::system_clock::now()) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json delivery_to_json(const DeliveryInfo& d, const std::string& computed_at) {
  return {{"destination", d.destination},
          {"drop_point_mm", {{"x", d.drop_x_mm}, {"y", d.drop_y_mm}}},
          {"clearance_mm", d.clearance_mm},
          {"markers_detected", d.markers_detected},
          {"computed_at", computed_at}};
}

/// Strict parse: exactly the response keys, finite numbers, destination 0-3.
inline DeliveryInfo delivery_from_json(const nlohmann::json& j, std::string* computed_at = nullptr) {
  static const char* keys[] = {"destination", "drop_point_mm", "clearance_mm", "markers_detected", "computed_at"};
  if (!j.is_object() || j.size() != std::size(keys)) throw ParseError("delivery response must have exactly 5 keys");
  for (const char* k : keys)
    if (!j.contains(k)) throw ParseError(std::string("delivery response lacks '") + k + "'");
  const auto& p = j.at("drop_point_mm");
  if (!p.is_object() || p.size() != 2 || !p.contains("x") || !p.contains("y") || !p.at("x").is_number() ||
      !p.at("y").is_number())
    throw ParseError("drop_point_mm must be {x, y}");
  if (!j.at("destination").is_number_integer() || !j.at("markers_detected").is_number_integer() ||
      !j.at("clearance_mm").is_number() || !j.at("computed_at").is_string())
    throw ParseError("delivery response field has the wrong type");
  DeliveryInfo d;
  d.destination = j.at("destination").get<int>();
  d.drop_x_mm = p.at("x").get<double>();
  d.drop_y_mm = p.at("y").get<double>();
  d.clearance_mm = j.at("clearance_mm").get<double>();
  d.markers_detected = j.at("markers_detected").get<int>();
  if (d.destination < 0 || d.destination > 3) throw ParseError("destination out of range");
  if (!std::isfinite(d.drop_x_mm) || !std::isfinite(d.drop_y_mm) || !std::isfinite(d.clearance_mm))
    throw ParseError("delivery numbers must be finite");
  if (computed_at) *computed_at = j.at("computed_at").get<std::string>();
  return d;
}

}  // namespace agvlab
