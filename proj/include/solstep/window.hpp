#pragma once

#include <string>
#include <vector>

#include "solstep/common.hpp"
#include "solstep/ingest.hpp"

namespace solstep {

struct WindowSpec {
  int length = 37;   // L, scans per window
  int overlap = 32;  // O, scans shared by consecutive windows

  int stride() const { return length - overlap; }
  void validate() const;
};

struct LabeledWindow {
  Matrix values;  // length x channels, volts (filtered)
  std::string label;
  std::string subject_id;
  Environment environment = Environment::Outdoor;
  int segment_id = 0;
};

// windows of length L starting every (L - O) samples: floor((T-L)/(L-O)) + 1
// for T >= L, else 0
int window_count(int total_samples, const WindowSpec& spec);

// O = round(L * pct/100), clamped so the stride stays >= 1
int overlap_to_samples(double overlap_pct, int length);

// L = round(sec * rate), never below 2
int seconds_to_samples(double window_sec, double rate_hz);

// Cuts each manifest segment independently; a window never crosses a segment
// boundary. Samples outside every segment are ignored. Segment membership is
// half-open: t_start <= t < t_end.
std::vector<LabeledWindow> make_windows(const SyncedRecording& rec, const WindowSpec& spec);

}  // namespace solstep
