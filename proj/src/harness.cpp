#include "solstep/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <set>
#include <thread>

#include <json.hpp>

#include "solstep/rng.hpp"

namespace solstep {

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::KFold: return "kfold";
    case Protocol::LeaveOneUserOut: return "louo";
    case Protocol::CrossEnvironment: return "crossenv";
  }
  return "?";
}

Protocol protocol_from_string(std::string_view s) {
  if (s == "kfold") return Protocol::KFold;
  if (s == "louo") return Protocol::LeaveOneUserOut;
  if (s == "crossenv") return Protocol::CrossEnvironment;
  throw ConfigError("unknown protocol '" + std::string(s) + "'");
}

void SplitPlan::validate() const {
  if (protocol == Protocol::KFold && k < 2) throw ConfigError("kfold: k must be >= 2");
  if (protocol == Protocol::CrossEnvironment && train_env == test_env) {
    throw ConfigError("crossenv: train and test environments must differ");
  }
}

std::vector<Split> split(const FeatureDataset& ds, const SplitPlan& plan) {
  plan.validate();
  const auto n = static_cast<int>(ds.windows.size());
  if (n == 0) throw DataError("split: empty dataset");

  std::vector<Split> out;
  switch (plan.protocol) {
    case Protocol::KFold: {
      if (n < plan.k) throw DataError("split: fewer windows than folds");
      std::vector<int> ids(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) ids[static_cast<size_t>(i)] = i;
      Rng rng(plan.seed);
      rng.shuffle(ids);
      for (int f = 0; f < plan.k; ++f) {
        const int begin = static_cast<int>(static_cast<int64_t>(f) * n / plan.k);
        const int end = static_cast<int>(static_cast<int64_t>(f + 1) * n / plan.k);
        Split s;
        s.id = "fold" + std::to_string(f);
        s.test_ids.assign(ids.begin() + begin, ids.begin() + end);
        s.train_ids.reserve(static_cast<size_t>(n - (end - begin)));
        s.train_ids.insert(s.train_ids.end(), ids.begin(), ids.begin() + begin);
        s.train_ids.insert(s.train_ids.end(), ids.begin() + end, ids.end());
        out.push_back(std::move(s));
      }
      break;
    }
    case Protocol::LeaveOneUserOut: {
      std::set<std::string> subjects;
      for (const auto& w : ds.windows) subjects.insert(w.subject_id);
      if (subjects.size() < 2) throw DataError("split: leave-one-user-out needs >= 2 subjects");
      for (const auto& subject : subjects) {
        Split s;
        s.id = subject;
        for (int i = 0; i < n; ++i) {
          if (ds.windows[static_cast<size_t>(i)].subject_id == subject) {
            s.test_ids.push_back(i);
          } else {
            s.train_ids.push_back(i);
          }
        }
        out.push_back(std::move(s));
      }
      break;
    }
    case Protocol::CrossEnvironment: {
      Split s;
      s.id = std::string(to_string(plan.train_env)) + "_to_" + to_string(plan.test_env);
      for (int i = 0; i < n; ++i) {
        const Environment e = ds.windows[static_cast<size_t>(i)].environment;
        if (e == plan.train_env) s.train_ids.push_back(i);
        if (e == plan.test_env) s.test_ids.push_back(i);
      }
      if (s.train_ids.empty()) throw DataError("split: no windows from the training environment");
      if (s.test_ids.empty()) throw DataError("split: no windows from the test environment");
      out.push_back(std::move(s));
      break;
    }
  }
  return out;
}

TrainerFn default_trainer(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  return [model_cfg, train_cfg](const FeatureDataset& ds, const std::vector<int>& train_ids,
                                uint64_t split_seed) -> Predictor {
    ModelConfig cfg = model_cfg;
    if (cfg.d_in == 0) cfg.d_in = ds.dim();
    if (cfg.n_classes == 0) cfg.n_classes = static_cast<int>(ds.classes.size());
    TrainConfig tcfg = train_cfg;
    tcfg.seed = split_seed;

    // stratified 10% validation carve-out; every class keeps at least one
    // training window
    std::map<std::string, std::vector<int>> by_class;
    for (const int id : train_ids) by_class[ds.windows[static_cast<size_t>(id)].label].push_back(id);
    Rng carve(mix64(split_seed ^ 0xca57e));
    std::vector<FeatureWindow> train_set, val_set;
    for (auto& [label, ids] : by_class) {
      carve.shuffle(ids);
      size_t n_val = ids.size() / 10;
      if (ids.size() >= 2 && n_val == 0) n_val = 1;
      if (n_val >= ids.size()) n_val = ids.size() - 1;
      for (size_t i = 0; i < ids.size(); ++i) {
        (i < n_val ? val_set : train_set).push_back(ds.windows[static_cast<size_t>(ids[i])]);
      }
    }

    TrainResult result =
        train(train_set, val_set, cfg, tcfg, ds.classes, ds.mode, ds.n_channels, ds.normalize);

    auto weights = std::make_shared<ModelWeights>(std::move(result.weights));
    auto normalizer = std::make_shared<Normalizer>(std::move(result.normalizer));
    const bool normalize = ds.normalize;
    return [weights, normalizer, cfg, normalize](const FeatureWindow& w) {
      return predict(*weights, cfg, *normalizer, w.values, normalize).label;
    };
  };
}

namespace {

SplitResult evaluate_split(const FeatureDataset& ds, const Split& split_def,
                           const Predictor& predictor) {
  const auto c = static_cast<Eigen::Index>(ds.classes.size());
  SplitResult r;
  r.split_id = split_def.id;
  r.confusion = Eigen::MatrixXi::Zero(c, c);
  for (const int id : split_def.test_ids) {
    const FeatureWindow& w = ds.windows[static_cast<size_t>(id)];
    const int truth = ds.label_index(w.label);
    const int pred = predictor(w);
    if (pred < 0 || pred >= c) throw NumericError("predictor returned class index out of range");
    r.confusion(truth, pred) += 1;
  }
  const int total = static_cast<int>(split_def.test_ids.size());
  r.accuracy = total == 0 ? 0.0 : static_cast<double>(r.confusion.trace()) / total;
  return r;
}

}  // namespace

EvalReport run_protocol(const FeatureDataset& ds, const SplitPlan& plan, const TrainerFn& trainer,
                        int jobs) {
  const std::vector<Split> splits = split(ds, plan);
  EvalReport report;
  report.protocol = to_string(plan.protocol);
  report.classes = ds.classes;
  report.splits.resize(splits.size());

  std::vector<std::exception_ptr> errors(splits.size());
  auto run_one = [&](size_t i) {
    try {
      const uint64_t split_seed = plan.seed + i;  // parallel and serial agree
      const Predictor predictor = trainer(ds, splits[i].train_ids, split_seed);
      report.splits[i] = evaluate_split(ds, splits[i], predictor);
    } catch (const ConfigError& e) {
      errors[i] = std::make_exception_ptr(
          ConfigError("split '" + splits[i].id + "': " + e.what()));
    } catch (const DataError& e) {
      errors[i] = std::make_exception_ptr(DataError("split '" + splits[i].id + "': " + e.what()));
    } catch (const NumericError& e) {
      errors[i] =
          std::make_exception_ptr(NumericError("split '" + splits[i].id + "': " + e.what()));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  if (jobs > 1 && splits.size() > 1) {
    std::atomic<size_t> next{0};
    auto worker = [&]() {
      while (true) {
        const size_t i = next.fetch_add(1);
        if (i >= splits.size()) break;
        run_one(i);
      }
    };
    std::vector<std::thread> pool;
    const size_t n_threads = std::min<size_t>(static_cast<size_t>(jobs), splits.size());
    for (size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  } else {
    for (size_t i = 0; i < splits.size(); ++i) run_one(i);
  }

  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  double sum = 0.0;
  for (const auto& s : report.splits) sum += s.accuracy;
  report.mean_accuracy = report.splits.empty() ? 0.0 : sum / static_cast<double>(report.splits.size());
  return report;
}

EvalReport run_protocol(const FeatureDataset& ds, const SplitPlan& plan,
                        const ModelConfig& model_cfg, const TrainConfig& train_cfg, int jobs) {
  return run_protocol(ds, plan, default_trainer(model_cfg, train_cfg), jobs);
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["protocol"] = r.protocol;
  j["classes"] = r.classes;
  j["mean_accuracy"] = r.mean_accuracy;
  j["splits"] = nlohmann::json::array();
  for (const auto& s : r.splits) {
    nlohmann::json confusion = nlohmann::json::array();
    for (Eigen::Index row = 0; row < s.confusion.rows(); ++row) {
      nlohmann::json jrow = nlohmann::json::array();
      for (Eigen::Index col = 0; col < s.confusion.cols(); ++col) jrow.push_back(s.confusion(row, col));
      confusion.push_back(jrow);
    }
    j["splits"].push_back(
        {{"id", s.split_id}, {"accuracy", s.accuracy}, {"confusion", confusion}});
  }
  if (!r.config_snapshot_json.empty()) {
    j["config"] = nlohmann::json::parse(r.config_snapshot_json);
  }
  return j.dump(2) + "\n";
}

std::string report_summary_csv(const EvalReport& r) {
  std::string out = "protocol,split,accuracy\n";
  char buf[128];
  for (const auto& s : r.splits) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%.6f\n", r.protocol.c_str(), s.split_id.c_str(),
                  s.accuracy);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%s,mean,%.6f\n", r.protocol.c_str(), r.mean_accuracy);
  out += buf;
  return out;
}

std::string confusion_to_csv(const Eigen::MatrixXi& confusion,
                             const std::vector<std::string>& classes) {
  std::string out = "truth\\pred";
  for (const auto& c : classes) out += "," + c;
  out += "\n";
  for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
    out += classes[static_cast<size_t>(r)];
    for (Eigen::Index c = 0; c < confusion.cols(); ++c) {
      out += "," + std::to_string(confusion(r, c));
    }
    out += "\n";
  }
  return out;
}

const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Overlap: return "overlap";
    case SweepAxis::Placement: return "placement";
    case SweepAxis::WindowSize: return "window";
  }
  return "?";
}

SweepAxis sweep_axis_from_string(std::string_view s) {
  if (s == "overlap") return SweepAxis::Overlap;
  if (s == "placement") return SweepAxis::Placement;
  if (s == "window") return SweepAxis::WindowSize;
  throw ConfigError("unknown sweep axis '" + std::string(s) + "'");
}

std::string sweep_to_csv(const SweepTable& t) {
  std::string out = std::string(to_string(t.axis)) + ",mean_accuracy,window_count\n";
  char buf[160];
  for (const auto& r : t.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%d\n", r.value.c_str(), r.mean_accuracy,
                  r.window_count);
    out += buf;
  }
  return out;
}

SweepTable sweep(const std::vector<SyncedRecording>& recordings, const PipelineConfig& base,
                 const SplitPlan& plan, const TrainerFn& trainer, SweepAxis axis,
                 const std::vector<std::string>& values, int jobs) {
  if (values.empty()) throw ConfigError("sweep: no axis values");
  SweepTable table;
  table.axis = axis;
  for (const auto& value : values) {
    PipelineConfig cfg = base;
    switch (axis) {
      case SweepAxis::Overlap: {
        size_t used = 0;
        double pct = 0.0;
        try {
          pct = std::stod(value, &used);
        } catch (const std::exception&) {
          throw ConfigError("sweep: bad overlap value '" + value + "'");
        }
        if (used != value.size()) throw ConfigError("sweep: bad overlap value '" + value + "'");
        cfg.overlap_pct = pct;
        break;
      }
      case SweepAxis::WindowSize: {
        size_t used = 0;
        double sec = 0.0;
        try {
          sec = std::stod(value, &used);
        } catch (const std::exception&) {
          throw ConfigError("sweep: bad window size '" + value + "'");
        }
        if (used != value.size()) throw ConfigError("sweep: bad window size '" + value + "'");
        cfg.window_sec = sec;
        break;
      }
      case SweepAxis::Placement:
        cfg.placement = PlacementConfig(placement_tag_from_string(value));
        break;
    }
    const FeatureDataset ds = build_dataset(recordings, cfg);
    const EvalReport report = run_protocol(ds, plan, trainer, jobs);
    table.rows.push_back({value, report.mean_accuracy, static_cast<int>(ds.windows.size())});
  }
  return table;
}

SweepTable sweep(const std::vector<SyncedRecording>& recordings, const PipelineConfig& base,
                 const ModelConfig& model_cfg, const TrainConfig& train_cfg, const SplitPlan& plan,
                 SweepAxis axis, const std::vector<std::string>& values, int jobs) {
  return sweep(recordings, base, plan, default_trainer(model_cfg, train_cfg), axis, values, jobs);
}

}  // namespace solstep
