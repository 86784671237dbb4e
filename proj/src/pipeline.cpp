#include "solstep/pipeline.hpp"

namespace solstep {

WindowSpec PipelineConfig::window_for_rate(double rate_hz) const {
  WindowSpec w;
  w.length = seconds_to_samples(window_sec, rate_hz);
  w.overlap = overlap_to_samples(overlap_pct, w.length);
  w.validate();
  return w;
}

std::vector<FeatureWindow> run_pipeline(const SyncedRecording& rec, const PipelineConfig& cfg) {
  const SyncedRecording subset = select_channels(rec, cfg.placement);
  FilterSpec fspec = cfg.filter;
  fspec.sample_rate_hz = rec.grid_rate_hz;
  const SyncedRecording filtered = lowpass(subset, fspec);
  const WindowSpec wspec = cfg.window_for_rate(rec.grid_rate_hz);
  std::vector<FeatureWindow> out;
  for (const auto& lw : make_windows(filtered, wspec)) {
    out.push_back(featurize(lw, cfg.features));
  }
  return out;
}

FeatureDataset build_dataset(const std::vector<SyncedRecording>& recordings,
                             const PipelineConfig& cfg) {
  std::vector<FeatureWindow> windows;
  for (const auto& rec : recordings) {
    auto w = run_pipeline(rec, cfg);
    windows.insert(windows.end(), std::make_move_iterator(w.begin()),
                   std::make_move_iterator(w.end()));
  }
  return make_feature_dataset(std::move(windows), cfg.features.mode, cfg.placement.count(),
                              cfg.features.normalize);
}

SyncedRecording ingest_session(const Session& session, double grid_rate_hz) {
  return synchronize(parse_readings(session.readings_csv), grid_rate_hz, session.manifest);
}

FeatureDataset build_dataset(const SynthDataset& synth, const PipelineConfig& cfg,
                             double grid_rate_hz) {
  std::vector<SyncedRecording> recs;
  recs.reserve(synth.sessions.size());
  for (const auto& s : synth.sessions) recs.push_back(ingest_session(s, grid_rate_hz));
  return build_dataset(recs, cfg);
}

}  // namespace solstep
