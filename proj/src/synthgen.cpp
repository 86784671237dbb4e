#include "solstep/synthgen.hpp"

#include <cmath>
#include <cstdio>

#include "solstep/rng.hpp"

namespace solstep {

namespace {

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 1469598103934665603ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

double waveform_value(Waveform w, double cycles) {
  switch (w) {
    case Waveform::Sine: return std::sin(2.0 * kPi * cycles);
    case Waveform::RectifiedSine: return std::abs(std::sin(kPi * cycles));
    case Waveform::Sawtooth: return 2.0 * (cycles - std::floor(cycles)) - 1.0;
    case Waveform::Flat: return 1.0;
  }
  return 0.0;
}

bool is_wrist(Placement p) {
  return p == Placement::LeftWrist || p == Placement::RightWrist;
}

bool is_right(Placement p) {
  return p == Placement::RightWrist || p == Placement::RightFoot;
}

}  // namespace

int quantize_voltage(double volts) {
  const double v = std::clamp(volts, 0.0, kAdcVref);
  return static_cast<int>(std::lround(v / kAdcVref * kAdcMax));
}

void SceneConfig::validate(const std::vector<ActivityModel>& models) const {
  if (noise_std < 0.0) throw ConfigError("scene: noise_std must be >= 0");
  if (timing_jitter_std < 0.0) throw ConfigError("scene: timing_jitter_std must be >= 0");
  double max_amp = 0.0;
  for (const auto& m : models) {
    if (m.foot_amp < 0.0 || m.wrist_amp < 0.0) {
      throw ConfigError("activity '" + m.label + "': amplitudes must be >= 0");
    }
    max_amp = std::max({max_amp, m.foot_amp, m.wrist_amp});
  }
  if (ambient_base + max_amp + flicker_amp > kAdcVref) {
    throw ConfigError("scene: ambient plus waveform exceeds the ADC range");
  }
  if (ambient_base - max_amp - flicker_amp < 0.0) {
    throw ConfigError("scene: ambient minus waveform drops below 0 V");
  }
}

std::vector<ActivityModel> default_activity_models(int n_classes) {
  if (n_classes < 2 || n_classes > 7) {
    throw ConfigError("activity models: n_classes must lie in [2, 7]");
  }
  const std::vector<ActivityModel> all = {
      {"standing", Waveform::Flat, 0.0, 0.0, 0.04, 0.02, kPi, false},
      {"cycling", Waveform::Sine, 1.4, 1.4, 0.25, 0.10, kPi, false},
      {"walking", Waveform::Sine, 1.9, 1.9, 0.32, 0.16, kPi, false},
      {"running", Waveform::Sine, 2.8, 2.8, 0.52, 0.26, kPi, false},
      {"jogging", Waveform::RectifiedSine, 2.3, 2.3, 0.42, 0.21, kPi, false},
      {"stair_climbing", Waveform::Sawtooth, 1.6, 1.6, 0.36, 0.18, kPi, false},
      {"stair_descending", Waveform::Sawtooth, 1.6, 1.6, 0.34, 0.17, kPi, true},
  };
  return {all.begin(), all.begin() + n_classes};
}

std::vector<ActivityModel> separable_activity_models(int n_classes, double difficulty) {
  if (difficulty < 0.0 || difficulty > 1.0) {
    throw ConfigError("activity models: difficulty must lie in [0, 1]");
  }
  auto models = default_activity_models(n_classes);
  // contract gait frequencies toward their mean as difficulty rises
  double mean_hz = 0.0;
  for (const auto& m : models) mean_hz += m.foot_hz;
  mean_hz /= static_cast<double>(models.size());
  const double squeeze = 1.0 - 0.8 * difficulty;
  for (auto& m : models) {
    if (m.waveform == Waveform::Flat) continue;
    m.foot_hz = mean_hz + (m.foot_hz - mean_hz) * squeeze;
    m.wrist_hz = m.foot_hz;
  }
  return models;
}

Session generate_session(const std::string& subject_id, const std::vector<ActivityModel>& activities,
                         double seconds_per_activity, const SceneConfig& scene, double rate_hz) {
  if (activities.empty()) throw ConfigError("generate_session: no activities");
  if (!(seconds_per_activity > 0.0)) {
    throw ConfigError("generate_session: seconds_per_activity must be positive");
  }
  if (!(rate_hz > 0.0)) throw ConfigError("generate_session: rate must be positive");
  scene.validate(activities);

  Session session;
  session.manifest.subject_id = subject_id;
  session.manifest.environment = scene.environment;
  session.manifest.time_of_day = scene.time_of_day;
  for (size_t i = 0; i < activities.size(); ++i) {
    session.manifest.segments.push_back({activities[i].label,
                                         static_cast<double>(i) * seconds_per_activity,
                                         static_cast<double>(i + 1) * seconds_per_activity});
  }

  const Rng subject_rng = Rng(scene.seed).fork(fnv1a(subject_id));
  // per-subject gait variation so held-out users differ from training users
  Rng style = subject_rng.fork(0xa11ce);
  const double rate_factor = 1.0 + 0.04 * style.uniform(-1.0, 1.0);
  const double amp_factor = 1.0 + 0.12 * style.uniform(-1.0, 1.0);

  const double total_s = seconds_per_activity * static_cast<double>(activities.size());
  const auto n_samples = static_cast<long>(std::llround(total_s * rate_hz));

  std::string csv = "device_id,placement,timestamp_s,adc_counts\n";
  csv.reserve(csv.size() + static_cast<size_t>(n_samples) * 4 * 32);
  char buf[96];

  for (int ci = 0; ci < 4; ++ci) {
    const Placement p = kAllPlacements[ci];
    const std::string device_id = subject_id + "-" + to_string(p);
    Rng jitter_rng = subject_rng.fork(100 + static_cast<uint64_t>(ci));
    Rng noise_rng = subject_rng.fork(200 + static_cast<uint64_t>(ci));
    double prev_t = -1.0;
    for (long i = 0; i < n_samples; ++i) {
      double t = static_cast<double>(i) / rate_hz + scene.timing_jitter_std * jitter_rng.normal();
      if (t <= prev_t) t = prev_t + 1e-4;
      prev_t = t;

      const auto seg = std::min<size_t>(
          activities.size() - 1,
          static_cast<size_t>(std::max(0.0, std::floor(t / seconds_per_activity))));
      const ActivityModel& act = activities[seg];
      const double hz = (is_wrist(p) ? act.wrist_hz : act.foot_hz) * rate_factor;
      const double amp = (is_wrist(p) ? act.wrist_amp : act.foot_amp) * amp_factor;
      const double phase_cycles =
          (is_right(p) ? act.lr_phase / (2.0 * kPi) : 0.0) + (is_wrist(p) ? 0.15 : 0.0);
      double w = waveform_value(act.waveform, hz * t + phase_cycles);
      if (act.inverted) w = -w;

      const double v = scene.ambient_base + scene.ambient_drift * t / 60.0 + amp * w +
                       scene.flicker_amp * std::sin(2.0 * kPi * scene.flicker_hz * t) +
                       scene.noise_std * noise_rng.normal();
      const int counts = quantize_voltage(v);

      std::snprintf(buf, sizeof(buf), "%s,%s,%.9f,%d\n", device_id.c_str(), to_string(p), t, counts);
      csv += buf;
    }
  }
  session.readings_csv = std::move(csv);
  return session;
}

SynthDataset generate_dataset(int n_subjects, const std::vector<ActivityModel>& activities,
                              double seconds_per_activity, const SceneConfig& scene, double rate_hz) {
  if (n_subjects < 1) throw ConfigError("generate_dataset: need at least one subject");
  SynthDataset ds;
  for (int s = 1; s <= n_subjects; ++s) {
    char name[16];
    std::snprintf(name, sizeof(name), "s%02d", s);
    ds.sessions.push_back(generate_session(name, activities, seconds_per_activity, scene, rate_hz));
  }
  return ds;
}

SynthDataset make_separable_dataset(int n_classes, double difficulty, int n_subjects,
                                    double seconds_per_activity, uint64_t seed) {
  SceneConfig scene;
  scene.seed = seed;
  scene.noise_std = 0.01 * (1.0 + 9.0 * difficulty);
  return generate_dataset(n_subjects, separable_activity_models(n_classes, difficulty),
                          seconds_per_activity, scene);
}

}  // namespace solstep
