#include "solstep/window.hpp"

#include <algorithm>
#include <cmath>

namespace solstep {

void WindowSpec::validate() const {
  if (length < 1) throw ConfigError("window: length must be positive");
  if (overlap < 0 || overlap > length - 1) {
    throw ConfigError("window: overlap must lie in [0, length-1]");
  }
}

int window_count(int total_samples, const WindowSpec& spec) {
  spec.validate();
  if (total_samples < spec.length) return 0;
  return (total_samples - spec.length) / spec.stride() + 1;
}

int overlap_to_samples(double overlap_pct, int length) {
  if (overlap_pct < 0.0 || overlap_pct >= 100.0) {
    throw ConfigError("window: overlap percent must lie in [0, 100)");
  }
  if (length < 1) throw ConfigError("window: length must be positive");
  auto o = static_cast<int>(std::lround(static_cast<double>(length) * overlap_pct / 100.0));
  o = std::min(o, length - 1);  // keep stride >= 1
  return std::max(o, 0);
}

int seconds_to_samples(double window_sec, double rate_hz) {
  if (!(window_sec > 0.0)) throw ConfigError("window: size in seconds must be positive");
  if (!(rate_hz > 0.0)) throw ConfigError("window: rate must be positive");
  const auto l = static_cast<int>(std::lround(window_sec * rate_hz));
  return std::max(l, 2);
}

std::vector<LabeledWindow> make_windows(const SyncedRecording& rec, const WindowSpec& spec) {
  spec.validate();
  std::vector<LabeledWindow> out;
  const int stride = spec.stride();
  for (size_t seg_idx = 0; seg_idx < rec.manifest.segments.size(); ++seg_idx) {
    const Segment& seg = rec.manifest.segments[seg_idx];
    // first grid index with time >= t_start, last with time < t_end
    const double rate = rec.grid_rate_hz;
    auto first = static_cast<Eigen::Index>(std::ceil((seg.t_start_s - rec.t0_s) * rate - 1e-9));
    first = std::max<Eigen::Index>(first, 0);
    auto last = static_cast<Eigen::Index>(std::floor((seg.t_end_s - rec.t0_s) * rate - 1e-9));
    last = std::min<Eigen::Index>(last, rec.samples() - 1);
    if (last < first) continue;
    const auto seg_len = static_cast<int>(last - first + 1);

    const int count = window_count(seg_len, spec);
    for (int i = 0; i < count; ++i) {
      LabeledWindow w;
      w.values = rec.values.middleRows(first + static_cast<Eigen::Index>(i) * stride, spec.length);
      w.label = seg.activity;
      w.subject_id = rec.manifest.subject_id;
      w.environment = rec.manifest.environment;
      w.segment_id = static_cast<int>(seg_idx);
      out.push_back(std::move(w));
    }
  }
  return out;
}

}  // namespace solstep
