#pragma once

#include <string>
#include <vector>

#include "solstep/common.hpp"
#include "solstep/ingest.hpp"

namespace solstep {

enum class Waveform { Sine, RectifiedSine, Sawtooth, Flat };

// One activity's signal signature. Feet carry the primary gait component;
// wrists follow at reduced amplitude. Left and right limbs are offset by
// lr_phase radians. inverted flips the waveform sign (falling vs rising
// sawtooth for stair descent).
struct ActivityModel {
  std::string label;
  Waveform waveform = Waveform::Sine;
  double foot_hz = 0.0;
  double wrist_hz = 0.0;
  double foot_amp = 0.0;   // volts
  double wrist_amp = 0.0;  // volts
  double lr_phase = kPi;
  bool inverted = false;
};

struct SceneConfig {
  Environment environment = Environment::Outdoor;
  TimeOfDay time_of_day = TimeOfDay::Afternoon;
  double ambient_base = 1.6;      // volts
  double ambient_drift = 0.0;     // volts per minute
  double noise_std = 0.01;        // volts
  double flicker_hz = 9.0;        // above the 5 Hz cutoff, below Nyquist
  double flicker_amp = 0.03;      // volts
  double timing_jitter_std = 0.0035;  // seconds
  uint64_t seed = 1;

  // ambient + waveform extremes must stay inside [0, V_ref]
  void validate(const std::vector<ActivityModel>& models) const;
};

struct Session {
  std::string readings_csv;
  SessionManifest manifest;
};

// clip to [0, V_ref], then round to the nearest 10-bit count; the dequantized
// value stays within V_ref/1023 of the clipped input
int quantize_voltage(double volts);

// built-in signatures; n in [2,7], first four are the default activity set
std::vector<ActivityModel> default_activity_models(int n_classes);

// class spacing shrinks and noise grows as difficulty rises from 0 toward 1
std::vector<ActivityModel> separable_activity_models(int n_classes, double difficulty);

// One subject performing each activity back to back at a nominal rate_hz, one
// device per placement with independent timing jitter. Output is bit-stable
// for a given configuration.
Session generate_session(const std::string& subject_id, const std::vector<ActivityModel>& activities,
                         double seconds_per_activity, const SceneConfig& scene,
                         double rate_hz = kDefaultRateHz);

struct SynthDataset {
  std::vector<Session> sessions;
};

SynthDataset generate_dataset(int n_subjects, const std::vector<ActivityModel>& activities,
                              double seconds_per_activity, const SceneConfig& scene,
                              double rate_hz = kDefaultRateHz);

// dataset used by the training fixtures: n_classes activities, well separated
// at difficulty 0
SynthDataset make_separable_dataset(int n_classes, double difficulty, int n_subjects = 2,
                                    double seconds_per_activity = 30.0, uint64_t seed = 1);

}  // namespace solstep
