#pragma once

#include <functional>
#include <string>
#include <vector>

#include "solstep/features.hpp"
#include "solstep/model.hpp"
#include "solstep/pipeline.hpp"

namespace solstep {

enum class Protocol { KFold, LeaveOneUserOut, CrossEnvironment };

const char* to_string(Protocol p);
Protocol protocol_from_string(std::string_view s);

struct SplitPlan {
  Protocol protocol = Protocol::KFold;
  int k = 5;
  Environment train_env = Environment::Outdoor;
  Environment test_env = Environment::Indoor;
  uint64_t seed = 0;

  void validate() const;
};

struct Split {
  std::string id;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
};

// KFold: seeded shuffle, k near-equal disjoint folds, each once as test.
// LeaveOneUserOut: one split per subject, that subject entirely in test.
// CrossEnvironment: a single split along the environment field.
std::vector<Split> split(const FeatureDataset& ds, const SplitPlan& plan);

struct SplitResult {
  std::string split_id;
  Eigen::MatrixXi confusion;  // rows = truth, cols = predicted
  double accuracy = 0.0;
};

struct EvalReport {
  std::string protocol;
  std::vector<std::string> classes;
  std::vector<SplitResult> splits;
  double mean_accuracy = 0.0;
  std::string config_snapshot_json;  // resolved config, for reproducibility
};

std::string report_to_json(const EvalReport& r);
std::string report_summary_csv(const EvalReport& r);
std::string confusion_to_csv(const Eigen::MatrixXi& confusion,
                             const std::vector<std::string>& classes);

// A trainer maps (dataset, train ids, per-split seed) to a predictor over
// windows. The default trainer wraps model::train; tests swap in stubs.
using Predictor = std::function<int(const FeatureWindow&)>;
using TrainerFn =
    std::function<Predictor(const FeatureDataset&, const std::vector<int>&, uint64_t)>;

TrainerFn default_trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

// Per split: train on the train ids, classify the test ids, tally the
// confusion matrix. Splits run independently (optionally in parallel); the
// per-split rng seed is plan.seed + split index either way, so results do
// not depend on scheduling.
EvalReport run_protocol(const FeatureDataset& ds, const SplitPlan& plan, const TrainerFn& trainer,
                        int jobs = 1);
EvalReport run_protocol(const FeatureDataset& ds, const SplitPlan& plan,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg, int jobs = 1);

enum class SweepAxis { Overlap, Placement, WindowSize };

const char* to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(std::string_view s);

struct SweepRow {
  std::string value;
  double mean_accuracy = 0.0;
  int window_count = 0;
};

struct SweepTable {
  SweepAxis axis = SweepAxis::Overlap;
  std::vector<SweepRow> rows;
};

std::string sweep_to_csv(const SweepTable& t);

// One run_protocol per axis value, rebuilding windows and features from the
// recordings each time with only that parameter changed.
SweepTable sweep(const std::vector<SyncedRecording>& recordings, const PipelineConfig& base,
                 const SplitPlan& plan, const TrainerFn& trainer, SweepAxis axis,
                 const std::vector<std::string>& values, int jobs = 1);
SweepTable sweep(const std::vector<SyncedRecording>& recordings, const PipelineConfig& base,
                 const ModelConfig& model_cfg, const TrainConfig& train_cfg, const SplitPlan& plan,
                 SweepAxis axis, const std::vector<std::string>& values, int jobs = 1);

}  // namespace solstep
