#pragma once

#include <string>
#include <vector>

#include "solstep/features.hpp"
#include "solstep/filter.hpp"
#include "solstep/ingest.hpp"
#include "solstep/synthgen.hpp"
#include "solstep/window.hpp"

namespace solstep {

// everything between a synchronized recording and model-ready features
struct PipelineConfig {
  PlacementConfig placement;
  FilterSpec filter;
  double window_sec = 1.6;
  double overlap_pct = 87.5;
  FeatureSpec features;

  WindowSpec window_for_rate(double rate_hz) const;
};

// filter -> channel subset -> windows -> features, one recording
std::vector<FeatureWindow> run_pipeline(const SyncedRecording& rec, const PipelineConfig& cfg);

FeatureDataset build_dataset(const std::vector<SyncedRecording>& recordings,
                             const PipelineConfig& cfg);

// synthgen sessions ingested through the same path as files on disk
SyncedRecording ingest_session(const Session& session, double grid_rate_hz = kDefaultRateHz);
FeatureDataset build_dataset(const SynthDataset& synth, const PipelineConfig& cfg,
                             double grid_rate_hz = kDefaultRateHz);

}  // namespace solstep
