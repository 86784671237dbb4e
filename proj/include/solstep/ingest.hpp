#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "solstep/common.hpp"

namespace solstep {

inline constexpr double kAdcVref = 3.3;  // micro:bit ADC reference, volts
inline constexpr int kAdcMax = 1023;     // 10-bit converter
inline constexpr double kDefaultRateHz = 23.1;

enum class Placement { LeftWrist, RightWrist, LeftFoot, RightFoot };
enum class Environment { Indoor, Outdoor };
enum class TimeOfDay { Morning, Afternoon, Evening };

// canonical channel order throughout: LW, RW, LF, RF
inline constexpr Placement kAllPlacements[4] = {
    Placement::LeftWrist, Placement::RightWrist, Placement::LeftFoot, Placement::RightFoot};

const char* to_string(Placement p);  // "LW" / "RW" / "LF" / "RF"
const char* to_string(Environment e);
const char* to_string(TimeOfDay t);
Placement placement_from_string(std::string_view s);
Environment environment_from_string(std::string_view s);
TimeOfDay time_of_day_from_string(std::string_view s);

// the activity vocabulary; the first four form the default set
inline const std::vector<std::string>& activity_labels() {
  static const std::vector<std::string> labels = {
      "standing", "cycling",        "walking",          "running",
      "jogging",  "stair_climbing", "stair_descending",
  };
  return labels;
}
bool is_known_activity(std::string_view label);

struct RawReading {
  std::string device_id;
  Placement placement = Placement::LeftWrist;
  double timestamp_s = 0.0;
  int adc_counts = 0;
};

struct DeviceStream {
  std::string device_id;
  Placement placement = Placement::LeftWrist;
  std::vector<RawReading> readings;  // strictly increasing timestamps
};

struct Segment {
  std::string activity;
  double t_start_s = 0.0;
  double t_end_s = 0.0;
};

struct SessionManifest {
  std::string subject_id;
  Environment environment = Environment::Outdoor;
  TimeOfDay time_of_day = TimeOfDay::Afternoon;
  std::vector<Segment> segments;
};

struct SyncedRecording {
  std::vector<Placement> channels;  // canonical order, present placements only
  double grid_rate_hz = kDefaultRateHz;
  double t0_s = 0.0;
  Matrix values;  // n_samples x channels.size(), volts
  SessionManifest manifest;

  Eigen::Index samples() const { return values.rows(); }
  double time_at(Eigen::Index k) const { return t0_s + static_cast<double>(k) / grid_rate_hz; }
};

double adc_to_voltage(int adc_counts);

// CSV schema: header "device_id,placement,timestamp_s,adc_counts".
// Rows may arrive interleaved across devices; each stream is sorted by
// timestamp. Duplicate timestamps within one device are an error.
std::vector<DeviceStream> parse_readings(std::string_view csv);

SessionManifest parse_manifest(std::string_view json_text);
std::string manifest_to_json(const SessionManifest& m);

// Resamples every stream onto the uniform grid t_k = t0 + k/rate by linear
// interpolation. t0 = max of stream starts; the grid ends at the last point
// <= min of stream ends, so no value is ever extrapolated.
SyncedRecording synchronize(const std::vector<DeviceStream>& streams, double grid_rate_hz,
                            SessionManifest manifest = {});

}  // namespace solstep
