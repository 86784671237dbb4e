#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "solstep/common.hpp"
#include "solstep/ingest.hpp"
#include "solstep/window.hpp"

namespace solstep {

enum class PlacementTag { F, FF, W, WW, WF, WFCross, WWFF };

const char* to_string(PlacementTag t);
PlacementTag placement_tag_from_string(std::string_view s);

// Sensor subsets for the position ablation. Single-sensor tags use the left
// side; WF pairs the same side, WFCross pairs opposite limbs.
struct PlacementConfig {
  PlacementTag tag = PlacementTag::WWFF;
  std::vector<Placement> channels;  // canonical order

  PlacementConfig() : PlacementConfig(PlacementTag::WWFF) {}
  explicit PlacementConfig(PlacementTag t);

  int count() const { return static_cast<int>(channels.size()); }
};

// drops channels not in the placement subset; errors if one is missing
SyncedRecording select_channels(const SyncedRecording& rec, const PlacementConfig& placement);

enum class FeatureMode { PairwiseOnly, TemporalOnly, Both, RawPassthrough };

const char* to_string(FeatureMode m);
FeatureMode feature_mode_from_string(std::string_view s);

struct FeatureSpec {
  FeatureMode mode = FeatureMode::Both;
  bool normalize = true;

  // PairwiseOnly: C(m,2); TemporalOnly: m; Both: C(m,2)+m; RawPassthrough: m
  int dim(int m) const;
};

struct FeatureWindow {
  Matrix values;  // length x dim
  std::string label;
  std::string subject_id;
  Environment environment = Environment::Outdoor;
};

// all pair differences V_a - V_b, pairs (a,b) with a < b in lexicographic
// order: (1,2), (1,3), ..., (m-1,m)
Vector pairwise_diff(const Vector& scan);

// row 0 is zeros; row t holds window[t] - window[t-1]
Matrix temporal_diff(const Matrix& window);

// Both mode lays out, per time step, the pairwise block first and the
// per-channel temporal block after it.
FeatureWindow featurize(const LabeledWindow& window, const FeatureSpec& spec);

// feature columns fed by a given input channel, for input-occlusion dropout
std::vector<int> feature_columns_of_channel(FeatureMode mode, int m, int channel);

struct Normalizer {
  Vector mean;  // per feature column
  Vector std;   // floored at 1e-8
};

// statistics pooled over every window and time step of the training set
Normalizer fit_normalizer(const std::vector<FeatureWindow>& train_windows);
Matrix apply_normalizer(const Normalizer& n, const Matrix& values);
void apply_normalizer_in_place(const Normalizer& n, std::vector<FeatureWindow>& windows);

// a windowed dataset plus the vocabulary the model trains against
struct FeatureDataset {
  std::vector<FeatureWindow> windows;
  std::vector<std::string> classes;  // sorted unique labels
  FeatureMode mode = FeatureMode::Both;
  int n_channels = 0;     // m before feature extraction
  bool normalize = true;  // whether trainers should z-score from their train split

  int label_index(const std::string& label) const;
  int dim() const { return windows.empty() ? 0 : static_cast<int>(windows.front().values.cols()); }
  int length() const { return windows.empty() ? 0 : static_cast<int>(windows.front().values.rows()); }
};

FeatureDataset make_feature_dataset(std::vector<FeatureWindow> windows, FeatureMode mode, int m,
                                    bool normalize = true);

}  // namespace solstep
