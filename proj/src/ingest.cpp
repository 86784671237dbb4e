#include "solstep/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include <json.hpp>

namespace solstep {

const char* to_string(Placement p) {
  switch (p) {
    case Placement::LeftWrist: return "LW";
    case Placement::RightWrist: return "RW";
    case Placement::LeftFoot: return "LF";
    case Placement::RightFoot: return "RF";
  }
  return "?";
}

const char* to_string(Environment e) {
  return e == Environment::Indoor ? "indoor" : "outdoor";
}

const char* to_string(TimeOfDay t) {
  switch (t) {
    case TimeOfDay::Morning: return "morning";
    case TimeOfDay::Afternoon: return "afternoon";
    case TimeOfDay::Evening: return "evening";
  }
  return "?";
}

Placement placement_from_string(std::string_view s) {
  if (s == "LW") return Placement::LeftWrist;
  if (s == "RW") return Placement::RightWrist;
  if (s == "LF") return Placement::LeftFoot;
  if (s == "RF") return Placement::RightFoot;
  throw DataError("unknown placement '" + std::string(s) + "' (expected LW/RW/LF/RF)");
}

Environment environment_from_string(std::string_view s) {
  if (s == "indoor") return Environment::Indoor;
  if (s == "outdoor") return Environment::Outdoor;
  throw DataError("unknown environment '" + std::string(s) + "'");
}

TimeOfDay time_of_day_from_string(std::string_view s) {
  if (s == "morning") return TimeOfDay::Morning;
  if (s == "afternoon") return TimeOfDay::Afternoon;
  if (s == "evening") return TimeOfDay::Evening;
  throw DataError("unknown time_of_day '" + std::string(s) + "'");
}

bool is_known_activity(std::string_view label) {
  const auto& all = activity_labels();
  return std::find(all.begin(), all.end(), label) != all.end();
}

double adc_to_voltage(int adc_counts) {
  if (adc_counts < 0 || adc_counts > kAdcMax) {
    throw DataError("adc_counts " + std::to_string(adc_counts) + " outside [0, 1023]");
  }
  return static_cast<double>(adc_counts) / kAdcMax * kAdcVref;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void row_error(size_t line_no, const std::string& what) {
  throw DataError("readings csv line " + std::to_string(line_no) + ": " + what);
}

}  // namespace

std::vector<DeviceStream> parse_readings(std::string_view csv) {
  std::map<std::string, DeviceStream, std::less<>> streams;  // keyed by device_id

  size_t line_no = 0;
  size_t pos = 0;
  bool saw_header = false;
  while (pos <= csv.size()) {
    const size_t nl = csv.find('\n', pos);
    std::string_view line =
        nl == std::string_view::npos ? csv.substr(pos) : csv.substr(pos, nl - pos);
    pos = nl == std::string_view::npos ? csv.size() + 1 : nl + 1;
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;

    if (!saw_header) {
      const auto fields = split_fields(line);
      if (fields.size() != 4 || fields[0] != "device_id" || fields[1] != "placement" ||
          fields[2] != "timestamp_s" || fields[3] != "adc_counts") {
        row_error(line_no, "expected header 'device_id,placement,timestamp_s,adc_counts'");
      }
      saw_header = true;
      continue;
    }

    const auto fields = split_fields(line);
    if (fields.size() != 4) {
      row_error(line_no, "expected 4 fields, got " + std::to_string(fields.size()));
    }
    RawReading r;
    r.device_id = std::string(fields[0]);
    if (r.device_id.empty()) row_error(line_no, "empty device_id");
    try {
      r.placement = placement_from_string(fields[1]);
    } catch (const DataError& e) {
      row_error(line_no, e.what());
    }
    {
      const auto s = fields[2];
      const auto res = std::from_chars(s.data(), s.data() + s.size(), r.timestamp_s);
      if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(r.timestamp_s)) {
        row_error(line_no, "bad timestamp_s '" + std::string(s) + "'");
      }
    }
    {
      const auto s = fields[3];
      const auto res = std::from_chars(s.data(), s.data() + s.size(), r.adc_counts);
      if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        row_error(line_no, "bad adc_counts '" + std::string(s) + "'");
      }
      if (r.adc_counts < 0 || r.adc_counts > kAdcMax) {
        row_error(line_no, "adc_counts " + std::to_string(r.adc_counts) + " outside [0, 1023]");
      }
    }

    auto [it, inserted] = streams.try_emplace(r.device_id);
    DeviceStream& stream = it->second;
    if (inserted) {
      stream.device_id = r.device_id;
      stream.placement = r.placement;
    } else if (stream.placement != r.placement) {
      row_error(line_no, "device '" + r.device_id + "' changes placement mid-stream");
    }
    stream.readings.push_back(std::move(r));
  }
  if (!saw_header) throw DataError("readings csv: empty input");

  std::vector<DeviceStream> out;
  out.reserve(streams.size());
  for (auto& [id, stream] : streams) {
    std::stable_sort(stream.readings.begin(), stream.readings.end(),
                     [](const RawReading& a, const RawReading& b) { return a.timestamp_s < b.timestamp_s; });
    for (size_t i = 1; i < stream.readings.size(); ++i) {
      if (stream.readings[i].timestamp_s == stream.readings[i - 1].timestamp_s) {
        throw DataError("device '" + id + "': duplicate timestamp " +
                        std::to_string(stream.readings[i].timestamp_s));
      }
    }
    out.push_back(std::move(stream));
  }
  return out;
}

SessionManifest parse_manifest(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: invalid json: ") + e.what());
  }
  SessionManifest m;
  try {
    m.subject_id = j.at("subject_id").get<std::string>();
    m.environment = environment_from_string(j.at("environment").get<std::string>());
    m.time_of_day = time_of_day_from_string(j.at("time_of_day").get<std::string>());
    for (const auto& seg : j.at("segments")) {
      Segment s;
      s.activity = seg.at("activity").get<std::string>();
      s.t_start_s = seg.at("t_start_s").get<double>();
      s.t_end_s = seg.at("t_end_s").get<double>();
      m.segments.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("manifest: missing or mistyped field: ") + e.what());
  }
  for (const auto& s : m.segments) {
    if (!is_known_activity(s.activity)) {
      throw DataError("manifest: unknown activity '" + s.activity + "'");
    }
    if (!(s.t_start_s < s.t_end_s)) {
      throw DataError("manifest: segment '" + s.activity + "' has t_start >= t_end");
    }
  }
  // non-overlap check on time-sorted copies
  std::vector<Segment> sorted = m.segments;
  std::sort(sorted.begin(), sorted.end(),
            [](const Segment& a, const Segment& b) { return a.t_start_s < b.t_start_s; });
  for (size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].t_start_s < sorted[i - 1].t_end_s) {
      throw DataError("manifest: segments overlap near t=" + std::to_string(sorted[i].t_start_s));
    }
  }
  return m;
}

std::string manifest_to_json(const SessionManifest& m) {
  nlohmann::json j;
  j["subject_id"] = m.subject_id;
  j["environment"] = to_string(m.environment);
  j["time_of_day"] = to_string(m.time_of_day);
  j["segments"] = nlohmann::json::array();
  for (const auto& s : m.segments) {
    j["segments"].push_back({{"activity", s.activity}, {"t_start_s", s.t_start_s}, {"t_end_s", s.t_end_s}});
  }
  return j.dump(2) + "\n";
}

SyncedRecording synchronize(const std::vector<DeviceStream>& streams, double grid_rate_hz,
                            SessionManifest manifest) {
  if (streams.empty()) throw DataError("synchronize: no streams");
  if (!(grid_rate_hz > 0.0)) throw ConfigError("synchronize: grid rate must be positive");

  std::vector<const DeviceStream*> ordered;
  for (Placement p : kAllPlacements) {
    const DeviceStream* found = nullptr;
    for (const auto& s : streams) {
      if (s.placement != p) continue;
      if (found) {
        throw DataError(std::string("synchronize: duplicate placement ") + to_string(p));
      }
      found = &s;
    }
    if (found) ordered.push_back(found);
  }
  if (ordered.size() != streams.size()) {
    throw DataError("synchronize: stream list inconsistent");
  }

  double t0 = -std::numeric_limits<double>::infinity();
  double t_end = std::numeric_limits<double>::infinity();
  for (const auto* s : ordered) {
    if (s->readings.size() < 2) {
      throw DataError("synchronize: device '" + s->device_id + "' has fewer than 2 readings");
    }
    t0 = std::max(t0, s->readings.front().timestamp_s);
    t_end = std::min(t_end, s->readings.back().timestamp_s);
  }
  if (t0 > t_end) throw DataError("synchronize: streams share no overlap interval");

  // last grid index with t0 + k/rate <= t_end; the epsilon absorbs roundoff
  // when t_end - t0 is an exact multiple of the step
  const auto n_samples =
      static_cast<Eigen::Index>(std::floor((t_end - t0) * grid_rate_hz + 1e-9)) + 1;

  SyncedRecording rec;
  rec.grid_rate_hz = grid_rate_hz;
  rec.t0_s = t0;
  rec.manifest = std::move(manifest);
  rec.values.resize(n_samples, static_cast<Eigen::Index>(ordered.size()));
  for (size_t c = 0; c < ordered.size(); ++c) {
    rec.channels.push_back(ordered[c]->placement);
    const auto& readings = ordered[c]->readings;
    size_t hi = 1;  // readings[hi-1].t <= t < readings[hi].t while scanning
    for (Eigen::Index k = 0; k < n_samples; ++k) {
      const double t = t0 + static_cast<double>(k) / grid_rate_hz;
      while (hi + 1 < readings.size() && readings[hi].timestamp_s < t) ++hi;
      const RawReading& a = readings[hi - 1];
      const RawReading& b = readings[hi];
      const double va = adc_to_voltage(a.adc_counts);
      const double vb = adc_to_voltage(b.adc_counts);
      const double span = b.timestamp_s - a.timestamp_s;
      const double w = std::clamp((t - a.timestamp_s) / span, 0.0, 1.0);
      rec.values(k, static_cast<Eigen::Index>(c)) = va + (vb - va) * w;
    }
  }
  return rec;
}

}  // namespace solstep
