#include "solstep/filter.hpp"

#include <cmath>

namespace solstep {

void FilterSpec::validate() const {
  if (!(sample_rate_hz > 0.0)) throw ConfigError("filter: sample rate must be positive");
  if (!(cutoff_hz > 0.0) || cutoff_hz >= sample_rate_hz / 2.0) {
    throw ConfigError("filter: cutoff must lie in (0, sample_rate/2)");
  }
  if (order < 1) throw ConfigError("filter: order must be >= 1");
}

Vector design_lowpass_taps(const FilterSpec& spec) {
  spec.validate();
  // enough taps to resolve the cutoff, but short enough that the group delay
  // (half the length) stays well under a window
  const double wanted =
      std::max(2.0 * spec.sample_rate_hz, 3.0 * spec.sample_rate_hz / spec.cutoff_hz);
  Eigen::Index n = static_cast<Eigen::Index>(std::ceil(wanted));
  if (n % 2 == 0) ++n;
  const Eigen::Index m = (n - 1) / 2;

  Vector gain(m + 1);
  for (Eigen::Index k = 0; k <= m; ++k) {
    const double f = static_cast<double>(k) * spec.sample_rate_hz / static_cast<double>(n);
    gain[k] = 1.0 / std::sqrt(1.0 + std::pow(f / spec.cutoff_hz, 2.0 * spec.order));
  }

  // real, symmetric inverse DFT of the sampled magnitude with linear phase
  // delay m; sum of taps equals gain at DC exactly
  Vector taps(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double acc = gain[0];
    for (Eigen::Index k = 1; k <= m; ++k) {
      acc += 2.0 * gain[k] * std::cos(2.0 * kPi * static_cast<double>(k * (i - m)) / static_cast<double>(n));
    }
    taps[i] = acc / static_cast<double>(n);
  }
  return taps;
}

LowpassFilter::LowpassFilter(const FilterSpec& spec)
    : taps_(design_lowpass_taps(spec)), history_(Vector::Zero(taps_.size())) {}

void LowpassFilter::reset() {
  history_.setZero();
  head_ = 0;
  primed_ = false;
}

double LowpassFilter::push(double x) {
  if (!primed_) {
    history_.setConstant(x);
    primed_ = true;
  }
  head_ = (head_ + taps_.size() - 1) % taps_.size();
  history_[head_] = x;
  double acc = 0.0;
  const Eigen::Index n = taps_.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    acc += taps_[i] * history_[(head_ + i) % n];
  }
  return acc;
}

Matrix lowpass(const Matrix& values, const FilterSpec& spec) {
  const Vector taps = design_lowpass_taps(spec);
  const Eigen::Index n = taps.size();
  Matrix out(values.rows(), values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) {
    for (Eigen::Index t = 0; t < values.rows(); ++t) {
      double acc = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        // history before the first sample reads as the first sample
        const Eigen::Index idx = t - i;
        acc += taps[i] * (idx >= 0 ? values(idx, c) : values(0, c));
      }
      out(t, c) = acc;
    }
  }
  return out;
}

SyncedRecording lowpass(const SyncedRecording& rec, const FilterSpec& spec) {
  if (std::abs(spec.sample_rate_hz - rec.grid_rate_hz) > 1e-9) {
    FilterSpec adjusted = spec;
    adjusted.sample_rate_hz = rec.grid_rate_hz;
    SyncedRecording out = rec;
    out.values = lowpass(rec.values, adjusted);
    return out;
  }
  SyncedRecording out = rec;
  out.values = lowpass(rec.values, spec);
  return out;
}

}  // namespace solstep
