#pragma once

#include "solstep/common.hpp"
#include "solstep/ingest.hpp"

namespace solstep {

struct FilterSpec {
  double cutoff_hz = 5.0;
  double sample_rate_hz = kDefaultRateHz;
  int order = 2;

  void validate() const;
};

// Causal low-pass whose gain tracks the Butterworth magnitude
// |H(f)| = (1 + (f/fc)^(2*order))^(-1/2) across the whole band, realized as a
// linear-phase FIR sampled on an fs/N grid (N odd). Gain is exact at DC and
// within a fraction of a percent elsewhere. A recursive biquad realization is
// off the Butterworth magnitude by 4x or more above ~0.8 Nyquist at
// fs = 23.1 Hz, which this design avoids; the price is a group delay of
// (N-1)/2 samples (about 1 s at the default rate and cutoff).
Vector design_lowpass_taps(const FilterSpec& spec);

// Streaming form; single-owner, carries one channel of history. History is
// seeded with the first pushed sample, so constant inputs pass through from
// the first output.
class LowpassFilter {
 public:
  explicit LowpassFilter(const FilterSpec& spec);

  double push(double x);
  void reset();
  const Vector& taps() const { return taps_; }

 private:
  Vector taps_;
  Vector history_;  // ring buffer, most recent at head_
  Eigen::Index head_ = 0;
  bool primed_ = false;
};

// column-wise filtering of a multi-channel signal
Matrix lowpass(const Matrix& values, const FilterSpec& spec);

SyncedRecording lowpass(const SyncedRecording& rec, const FilterSpec& spec);

}  // namespace solstep
