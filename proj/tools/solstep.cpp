// solstep: photovoltaic activity-recognition pipeline
//   simulate  generate synthetic multi-device recordings
//   train     fit the transformer classifier on a recorded dataset
//   eval      run a cross-validation protocol and write reports
//   sweep     repeat eval while varying one pipeline parameter
//   infer     classify a single preprocessed window

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "solstep/harness.hpp"
#include "solstep/model_io.hpp"
#include "solstep/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace solstep;

namespace {

struct SimulateOptions {
  std::string out = "out/sim";
  int subjects = 6;
  int activities = 4;
  double seconds = 180.0;
  double difficulty = 0.0;
  std::string environments = "outdoor";  // outdoor | indoor | both
  double indoor_ambient = 0.9;
  double outdoor_ambient = 1.6;
  double noise_std = 0.01;
  double flicker_amp = 0.03;
  double jitter_std = 0.0035;
  uint64_t seed = 1;
};

struct PipelineOptions {
  std::string placement = "WWFF";
  double cutoff_hz = 5.0;
  int filter_order = 2;
  double window_sec = 1.6;
  double overlap_pct = 87.5;
  std::string features = "both";
  bool no_normalize = false;

  PipelineConfig to_config() const {
    PipelineConfig cfg;
    cfg.placement = PlacementConfig(placement_tag_from_string(placement));
    cfg.filter.cutoff_hz = cutoff_hz;
    cfg.filter.order = filter_order;
    cfg.window_sec = window_sec;
    cfg.overlap_pct = overlap_pct;
    cfg.features.mode = feature_mode_from_string(features);
    cfg.features.normalize = !no_normalize;
    return cfg;
  }
};

struct ModelOptions {
  int blocks = 4;
  int heads = 4;
  int head_size = 256;
  int ff_channels = 4;
  double attn_dropout = 0.125;
  double mlp_dropout = 0.2;
  int mlp_units = 128;
  bool no_positional_encoding = false;

  ModelConfig to_config() const {
    ModelConfig cfg;
    cfg.num_blocks = blocks;
    cfg.num_heads = heads;
    cfg.head_size = head_size;
    cfg.ff_channels = ff_channels;
    cfg.attn_dropout = attn_dropout;
    cfg.mlp_dropout = mlp_dropout;
    cfg.mlp_units = mlp_units;
    cfg.use_positional_encoding = !no_positional_encoding;
    return cfg;  // d_in and n_classes come from the dataset
  }
};

struct TrainOptions {
  double lr = 1e-3;
  int batch = 64;
  int epochs = 150;
  int patience = 15;
  double channel_dropout = 0.0;
  int threads = 0;
  double val_fraction = 0.1;

  TrainConfig to_config(uint64_t seed) const {
    TrainConfig cfg;
    cfg.lr = lr;
    cfg.batch_size = batch;
    cfg.max_epochs = epochs;
    cfg.patience = patience;
    cfg.input_channel_dropout_prob = channel_dropout;
    cfg.threads = threads;
    cfg.seed = seed;
    return cfg;
  }
};

struct EvalOptions {
  std::string protocol = "kfold";
  int k = 5;
  std::string train_env = "outdoor";
  std::string test_env = "indoor";
  int jobs = 1;

  SplitPlan to_plan(uint64_t seed) const {
    SplitPlan plan;
    plan.protocol = protocol_from_string(protocol);
    plan.k = k;
    plan.train_env = environment_from_string(train_env);
    plan.test_env = environment_from_string(test_env);
    plan.seed = seed;
    return plan;
  }
};

void write_file(const fs::path& path, std::string_view content) {
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path.string() + "' for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw DataError("failed writing '" + path.string() + "'");
}

std::string read_file(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// one recording per manifest_*.json / readings_*.csv pair, sorted by name
std::vector<SyncedRecording> load_recordings(const std::string& dir, double rate_hz) {
  if (!fs::is_directory(dir)) throw DataError("dataset directory '" + dir + "' does not exist");
  std::vector<fs::path> manifests;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("manifest_", 0) == 0 && entry.path().extension() == ".json") {
      manifests.push_back(entry.path());
    }
  }
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) throw DataError("no manifest_*.json files in '" + dir + "'");

  std::vector<SyncedRecording> recordings;
  for (const auto& mpath : manifests) {
    const std::string stem = mpath.stem().string().substr(std::string("manifest_").size());
    const fs::path rpath = mpath.parent_path() / ("readings_" + stem + ".csv");
    if (!fs::exists(rpath)) {
      throw DataError("manifest '" + mpath.string() + "' has no matching '" + rpath.string() +
                      "'");
    }
    const SessionManifest manifest = parse_manifest(read_file(mpath));
    recordings.push_back(synchronize(parse_readings(read_file(rpath)), rate_hz, manifest));
  }
  return recordings;
}

json pipeline_json(const PipelineOptions& p) {
  return {{"placement", p.placement},       {"cutoff_hz", p.cutoff_hz},
          {"filter_order", p.filter_order}, {"window_sec", p.window_sec},
          {"overlap_pct", p.overlap_pct},   {"features", p.features},
          {"normalize", !p.no_normalize}};
}

json model_json(const ModelOptions& m) {
  return {{"blocks", m.blocks},
          {"heads", m.heads},
          {"head_size", m.head_size},
          {"ff_channels", m.ff_channels},
          {"attn_dropout", m.attn_dropout},
          {"mlp_dropout", m.mlp_dropout},
          {"mlp_units", m.mlp_units},
          {"positional_encoding", !m.no_positional_encoding}};
}

json train_json(const TrainOptions& t) {
  return {{"lr", t.lr},
          {"batch", t.batch},
          {"epochs", t.epochs},
          {"patience", t.patience},
          {"channel_dropout", t.channel_dropout},
          {"val_fraction", t.val_fraction}};
}

void write_run_json(const fs::path& out_dir, const std::string& command, const json& config,
                    uint64_t seed) {
  json run;
  run["command"] = command;
  run["config"] = config;
  run["seed"] = seed;
  run["tool_version"] = kToolVersion;
  write_file(out_dir / "run.json", run.dump(2) + "\n");
}

// ---- simulate ----

void run_simulate(const SimulateOptions& opt) {
  if (opt.environments != "outdoor" && opt.environments != "indoor" &&
      opt.environments != "both") {
    throw ConfigError("--environments must be outdoor, indoor, or both");
  }
  const auto models = separable_activity_models(opt.activities, opt.difficulty);

  std::vector<std::pair<std::string, SceneConfig>> scenes;
  auto scene_for = [&](Environment env, uint64_t seed_offset) {
    SceneConfig scene;
    scene.environment = env;
    scene.ambient_base = env == Environment::Outdoor ? opt.outdoor_ambient : opt.indoor_ambient;
    scene.noise_std = opt.noise_std;
    scene.flicker_amp = opt.flicker_amp;
    scene.timing_jitter_std = opt.jitter_std;
    scene.seed = opt.seed + seed_offset;
    return scene;
  };
  if (opt.environments == "outdoor" || opt.environments == "both") {
    scenes.emplace_back("outdoor", scene_for(Environment::Outdoor, 0));
  }
  if (opt.environments == "indoor" || opt.environments == "both") {
    scenes.emplace_back("indoor", scene_for(Environment::Indoor, 1000003));
  }

  size_t total_rows = 0;
  int sessions = 0;
  for (const auto& [env_name, scene] : scenes) {
    const SynthDataset ds = generate_dataset(opt.subjects, models, opt.seconds, scene);
    for (const auto& session : ds.sessions) {
      const std::string stem = scenes.size() == 1 ? session.manifest.subject_id
                                                  : session.manifest.subject_id + "_" + env_name;
      write_file(fs::path(opt.out) / ("readings_" + stem + ".csv"), session.readings_csv);
      write_file(fs::path(opt.out) / ("manifest_" + stem + ".json"),
                 manifest_to_json(session.manifest));
      // header line excluded from the row count
      total_rows += static_cast<size_t>(std::count(session.readings_csv.begin(),
                                                   session.readings_csv.end(), '\n')) -
                    1;
      ++sessions;
    }
  }

  json config;
  config["out"] = opt.out;
  config["subjects"] = opt.subjects;
  config["activities"] = opt.activities;
  config["seconds"] = opt.seconds;
  config["difficulty"] = opt.difficulty;
  config["environments"] = opt.environments;
  config["indoor_ambient"] = opt.indoor_ambient;
  config["outdoor_ambient"] = opt.outdoor_ambient;
  config["noise_std"] = opt.noise_std;
  config["flicker_amp"] = opt.flicker_amp;
  config["jitter_std"] = opt.jitter_std;
  write_run_json(opt.out, "simulate", config, opt.seed);

  std::cout << "wrote " << sessions << " sessions (" << opt.subjects << " subjects x "
            << opt.activities << " activities x " << opt.seconds << " s, " << total_rows
            << " readings) to " << opt.out << "\n";
}

SimulateOptions simulate_from_json(const json& config, uint64_t seed) {
  SimulateOptions opt;
  opt.out = config.at("out").get<std::string>();
  opt.subjects = config.at("subjects").get<int>();
  opt.activities = config.at("activities").get<int>();
  opt.seconds = config.at("seconds").get<double>();
  opt.difficulty = config.at("difficulty").get<double>();
  opt.environments = config.at("environments").get<std::string>();
  opt.indoor_ambient = config.at("indoor_ambient").get<double>();
  opt.outdoor_ambient = config.at("outdoor_ambient").get<double>();
  opt.noise_std = config.at("noise_std").get<double>();
  opt.flicker_amp = config.at("flicker_amp").get<double>();
  opt.jitter_std = config.at("jitter_std").get<double>();
  opt.seed = seed;
  return opt;
}

// ---- train ----

struct SplitSets {
  std::vector<FeatureWindow> train, val;
};

// stratified validation carve-out; every class keeps at least one training
// window
SplitSets carve_validation(const FeatureDataset& ds, double fraction, uint64_t seed) {
  if (fraction < 0.0 || fraction >= 1.0) {
    throw ConfigError("--val-fraction must lie in [0, 1)");
  }
  std::map<std::string, std::vector<size_t>> by_class;
  for (size_t i = 0; i < ds.windows.size(); ++i) by_class[ds.windows[i].label].push_back(i);
  Rng rng(mix64(seed ^ 0x5a11dULL));
  SplitSets out;
  for (auto& [label, ids] : by_class) {
    rng.shuffle(ids);
    auto n_val = static_cast<size_t>(fraction * static_cast<double>(ids.size()));
    if (ids.size() >= 2 && n_val == 0 && fraction > 0.0) n_val = 1;
    if (n_val >= ids.size()) n_val = ids.size() - 1;
    for (size_t i = 0; i < ids.size(); ++i) {
      (i < n_val ? out.val : out.train).push_back(ds.windows[ids[i]]);
    }
  }
  return out;
}

std::string history_csv(const std::vector<EpochStats>& history) {
  std::string out = "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
  char buf[160];
  for (size_t i = 0; i < history.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.9f,%.9f,%.9f,%.9f\n", i + 1, history[i].train_loss,
                  history[i].train_accuracy, history[i].val_loss, history[i].val_accuracy);
    out += buf;
  }
  return out;
}

void run_train(const std::string& data_dir, const std::string& out_dir,
               const PipelineOptions& popt, const ModelOptions& mopt, const TrainOptions& topt,
               uint64_t seed) {
  const PipelineConfig pcfg = popt.to_config();
  const auto recordings = load_recordings(data_dir, kDefaultRateHz);
  const FeatureDataset ds = build_dataset(recordings, pcfg);
  if (ds.windows.empty()) throw DataError("dataset produced no windows");

  ModelConfig mcfg = mopt.to_config();
  mcfg.d_in = ds.dim();
  mcfg.n_classes = static_cast<int>(ds.classes.size());
  const TrainConfig tcfg = topt.to_config(seed);

  const SplitSets sets = carve_validation(ds, topt.val_fraction, seed);
  const TrainResult result =
      train(sets.train, sets.val, mcfg, tcfg, ds.classes, ds.mode, ds.n_channels, ds.normalize);

  ModelBundle bundle;
  bundle.weights = result.weights;
  bundle.config = mcfg;
  bundle.feature_spec = pcfg.features;
  bundle.placement = pcfg.placement;
  bundle.classes = ds.classes;
  bundle.normalizer = result.normalizer;
  bundle.seed = seed;
  fs::create_directories(out_dir);
  save_model((fs::path(out_dir) / "model.bin").string(), bundle);
  write_file(fs::path(out_dir) / "history.csv", history_csv(result.history));

  json config;
  config["data"] = data_dir;
  config["out"] = out_dir;
  config["pipeline"] = pipeline_json(popt);
  config["model"] = model_json(mopt);
  config["train"] = train_json(topt);
  write_run_json(out_dir, "train", config, seed);

  const auto& best = result.history[static_cast<size_t>(result.best_epoch)];
  std::cout << "trained on " << sets.train.size() << " windows (" << sets.val.size()
            << " validation), " << result.history.size() << " epochs, best epoch "
            << result.best_epoch + 1 << ": val_loss " << best.val_loss << ", val_accuracy "
            << best.val_accuracy << "\n"
            << "model written to " << (fs::path(out_dir) / "model.bin").string() << "\n";
}

// ---- eval / sweep ----

void write_report_files(const fs::path& out_dir, const EvalReport& report) {
  write_file(out_dir / "report.json", report_to_json(report));
  write_file(out_dir / "summary.csv", report_summary_csv(report));
  for (const auto& s : report.splits) {
    write_file(out_dir / ("confusion_" + s.split_id + ".csv"),
               confusion_to_csv(s.confusion, report.classes));
  }
}

void run_eval(const std::string& data_dir, const std::string& out_dir,
              const PipelineOptions& popt, const ModelOptions& mopt, const TrainOptions& topt,
              const EvalOptions& eopt, uint64_t seed) {
  const PipelineConfig pcfg = popt.to_config();
  const auto recordings = load_recordings(data_dir, kDefaultRateHz);
  const FeatureDataset ds = build_dataset(recordings, pcfg);
  const SplitPlan plan = eopt.to_plan(seed);

  json config;
  config["data"] = data_dir;
  config["out"] = out_dir;
  config["pipeline"] = pipeline_json(popt);
  config["model"] = model_json(mopt);
  config["train"] = train_json(topt);
  config["protocol"] = eopt.protocol;
  config["k"] = eopt.k;
  config["train_env"] = eopt.train_env;
  config["test_env"] = eopt.test_env;

  EvalReport report = run_protocol(ds, plan, mopt.to_config(), topt.to_config(seed), eopt.jobs);
  report.config_snapshot_json = config.dump();
  write_report_files(out_dir, report);
  write_run_json(out_dir, "eval", config, seed);

  for (const auto& s : report.splits) {
    std::cout << s.split_id << ": accuracy " << s.accuracy << "\n";
  }
  std::cout << "mean accuracy " << report.mean_accuracy << " over " << report.splits.size()
            << " splits; reports in " << out_dir << "\n";
}

void run_sweep(const std::string& data_dir, const std::string& out_dir,
               const PipelineOptions& popt, const ModelOptions& mopt, const TrainOptions& topt,
               const EvalOptions& eopt, const std::string& axis,
               const std::vector<std::string>& values, uint64_t seed) {
  const PipelineConfig pcfg = popt.to_config();
  const auto recordings = load_recordings(data_dir, kDefaultRateHz);
  const SplitPlan plan = eopt.to_plan(seed);

  const SweepTable table = sweep(recordings, pcfg, mopt.to_config(), topt.to_config(seed), plan,
                                 sweep_axis_from_string(axis), values, eopt.jobs);

  json config;
  config["data"] = data_dir;
  config["out"] = out_dir;
  config["pipeline"] = pipeline_json(popt);
  config["model"] = model_json(mopt);
  config["train"] = train_json(topt);
  config["protocol"] = eopt.protocol;
  config["k"] = eopt.k;
  config["axis"] = axis;
  config["values"] = values;

  write_file(fs::path(out_dir) / "sweep.csv", sweep_to_csv(table));
  write_run_json(out_dir, "sweep", config, seed);

  std::cout << sweep_to_csv(table);
  std::cout << "sweep table written to " << (fs::path(out_dir) / "sweep.csv").string() << "\n";
}

// ---- infer ----

// window csv: header names the model's channels (LW/RW/LF/RF subset), rows
// are low-pass-filtered volts
Matrix parse_window_csv(const std::string& text, const std::vector<Placement>& channels) {
  std::vector<std::vector<double>> rows;
  size_t line_no = 0;
  size_t pos = 0;
  bool saw_header = false;
  while (pos <= text.size()) {
    const size_t nl = text.find('\n', pos);
    std::string line = nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos);
    pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      const size_t comma = line.find(',', start);
      fields.push_back(line.substr(start, comma == std::string::npos ? comma : comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }

    if (!saw_header) {
      if (fields.size() != channels.size()) {
        throw DataError("window csv: expected " + std::to_string(channels.size()) +
                        " channel columns, got " + std::to_string(fields.size()));
      }
      for (size_t i = 0; i < channels.size(); ++i) {
        if (fields[i] != to_string(channels[i])) {
          throw DataError("window csv: column " + std::to_string(i + 1) + " is '" + fields[i] +
                          "', model expects '" + to_string(channels[i]) + "'");
        }
      }
      saw_header = true;
      continue;
    }
    if (fields.size() != channels.size()) {
      throw DataError("window csv line " + std::to_string(line_no) + ": expected " +
                      std::to_string(channels.size()) + " values");
    }
    std::vector<double> row;
    for (const auto& f : fields) {
      try {
        size_t used = 0;
        row.push_back(std::stod(f, &used));
        if (used != f.size()) throw std::invalid_argument(f);
      } catch (const std::exception&) {
        throw DataError("window csv line " + std::to_string(line_no) + ": bad value '" + f +
                        "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (!saw_header) throw DataError("window csv: empty input");
  if (rows.size() < 2) throw DataError("window csv: need at least 2 scans");

  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(channels.size()));
  for (size_t r = 0; r < rows.size(); ++r) {
    for (size_t c = 0; c < channels.size(); ++c) {
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return out;
}

void run_infer(const std::string& model_path, const std::string& window_path) {
  const ModelBundle bundle = load_model(model_path);
  const Matrix window = parse_window_csv(read_file(window_path), bundle.placement.channels);

  LabeledWindow lw;
  lw.values = window;
  const FeatureWindow features = featurize(lw, bundle.feature_spec);
  const Prediction pred = predict(bundle.weights, bundle.config, bundle.normalizer,
                                  features.values, bundle.feature_spec.normalize);

  json out;
  out["label"] = bundle.classes[static_cast<size_t>(pred.label)];
  out["probs"] = std::vector<double>(pred.probs.data(), pred.probs.data() + pred.probs.size());
  std::cout << out.dump() << "\n";
}

uint64_t resolve_seed(const std::optional<uint64_t>& flag_seed) {
  if (flag_seed) return *flag_seed;
  if (const char* env = std::getenv("SOLSTEP_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("SOLSTEP_SEED is not a number: '" + std::string(env) + "'");
    }
  }
  return 0;
}

json load_run_json(const std::string& path, const std::string& expected_command) {
  json run;
  try {
    run = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw DataError("run file '" + path + "': " + e.what());
  }
  if (run.value("command", "") != expected_command) {
    throw ConfigError("run file '" + path + "' was written by '" + run.value("command", "?") +
                      "', not '" + expected_command + "'");
  }
  return run;
}

void apply_pipeline_json(const json& j, PipelineOptions& p) {
  p.placement = j.at("placement").get<std::string>();
  p.cutoff_hz = j.at("cutoff_hz").get<double>();
  p.filter_order = j.at("filter_order").get<int>();
  p.window_sec = j.at("window_sec").get<double>();
  p.overlap_pct = j.at("overlap_pct").get<double>();
  p.features = j.at("features").get<std::string>();
  p.no_normalize = !j.at("normalize").get<bool>();
}

void apply_model_json(const json& j, ModelOptions& m) {
  m.blocks = j.at("blocks").get<int>();
  m.heads = j.at("heads").get<int>();
  m.head_size = j.at("head_size").get<int>();
  m.ff_channels = j.at("ff_channels").get<int>();
  m.attn_dropout = j.at("attn_dropout").get<double>();
  m.mlp_dropout = j.at("mlp_dropout").get<double>();
  m.mlp_units = j.at("mlp_units").get<int>();
  m.no_positional_encoding = !j.at("positional_encoding").get<bool>();
}

void apply_train_json(const json& j, TrainOptions& t) {
  t.lr = j.at("lr").get<double>();
  t.batch = j.at("batch").get<int>();
  t.epochs = j.at("epochs").get<int>();
  t.patience = j.at("patience").get<int>();
  t.channel_dropout = j.at("channel_dropout").get<double>();
  t.val_fraction = j.at("val_fraction").get<double>();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"photovoltaic human-activity recognition pipeline"};
  app.require_subcommand(1);
  app.set_config("--config")->description("TOML config file; flags override it");

  std::optional<uint64_t> seed_flag;
  app.add_option("--seed", seed_flag, "global rng seed (default: $SOLSTEP_SEED or 0)");

  // simulate
  SimulateOptions sim;
  std::string sim_from_run;
  auto* c_sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  c_sim->fallthrough();  // --seed may follow the subcommand
  c_sim->add_option("--out", sim.out, "output directory");
  c_sim->add_option("--subjects", sim.subjects, "number of subjects")->check(CLI::PositiveNumber);
  c_sim->add_option("--activities", sim.activities, "number of activity classes (2-7)");
  c_sim->add_option("--seconds", sim.seconds, "seconds per activity segment");
  c_sim->add_option("--difficulty", sim.difficulty, "class separation difficulty in [0,1]");
  c_sim->add_option("--environments", sim.environments, "outdoor | indoor | both");
  c_sim->add_option("--indoor-ambient", sim.indoor_ambient, "indoor ambient level, volts");
  c_sim->add_option("--outdoor-ambient", sim.outdoor_ambient, "outdoor ambient level, volts");
  c_sim->add_option("--noise-std", sim.noise_std, "sensor noise sigma, volts");
  c_sim->add_option("--flicker-amp", sim.flicker_amp, "9 Hz flicker amplitude, volts");
  c_sim->add_option("--jitter-std", sim.jitter_std, "sampling jitter sigma, seconds");
  c_sim->add_option("--from-run", sim_from_run, "re-run from a run.json");

  // shared pipeline/model/train option groups
  PipelineOptions pipe;
  ModelOptions model;
  TrainOptions tr;
  auto add_pipeline_options = [&](CLI::App* cmd) {
    cmd->add_option("--placement", pipe.placement, "F|FF|W|WW|WF|WF_cross|WWFF");
    cmd->add_option("--cutoff", pipe.cutoff_hz, "low-pass cutoff, Hz");
    cmd->add_option("--filter-order", pipe.filter_order, "low-pass order");
    cmd->add_option("--window-sec", pipe.window_sec, "window size, seconds");
    cmd->add_option("--overlap", pipe.overlap_pct, "window overlap, percent");
    cmd->add_option("--features", pipe.features, "pairwise|temporal|both|raw");
    cmd->add_flag("--no-normalize", pipe.no_normalize, "skip per-feature z-scoring");
  };
  auto add_model_options = [&](CLI::App* cmd) {
    cmd->add_option("--blocks", model.blocks, "transformer blocks");
    cmd->add_option("--heads", model.heads, "attention heads");
    cmd->add_option("--head-size", model.head_size, "per-head key dimension");
    cmd->add_option("--ff-channels", model.ff_channels, "feed-forward bottleneck width");
    cmd->add_option("--attn-dropout", model.attn_dropout, "attention dropout rate");
    cmd->add_option("--mlp-dropout", model.mlp_dropout, "classifier dropout rate");
    cmd->add_option("--mlp-units", model.mlp_units, "classifier hidden units");
    cmd->add_flag("--no-positional-encoding", model.no_positional_encoding,
                  "drop the additive positional encoding");
  };
  auto add_train_options = [&](CLI::App* cmd) {
    cmd->add_option("--lr", tr.lr, "Adam learning rate");
    cmd->add_option("--batch", tr.batch, "mini-batch size");
    cmd->add_option("--epochs", tr.epochs, "maximum epochs");
    cmd->add_option("--patience", tr.patience, "early-stop patience, epochs");
    cmd->add_option("--channel-dropout", tr.channel_dropout,
                    "per-example input channel occlusion probability");
    cmd->add_option("--threads", tr.threads, "worker threads (0 = hardware)");
    cmd->add_option("--val-fraction", tr.val_fraction, "validation share of training data");
  };

  // train
  std::string train_data, train_out = "out/train", train_from_run;
  auto* c_train = app.add_subcommand("train", "train a model on a dataset directory");
  c_train->fallthrough();  // --seed may follow the subcommand
  c_train->add_option("--data", train_data, "dataset directory (from simulate)");
  c_train->add_option("--out", train_out, "output directory");
  add_pipeline_options(c_train);
  add_model_options(c_train);
  add_train_options(c_train);
  c_train->add_option("--from-run", train_from_run, "re-run from a run.json");

  // eval
  EvalOptions ev;
  std::string eval_data, eval_out = "out/eval", eval_from_run;
  auto* c_eval = app.add_subcommand("eval", "run a cross-validation protocol");
  c_eval->fallthrough();  // --seed may follow the subcommand
  c_eval->add_option("--data", eval_data, "dataset directory");
  c_eval->add_option("--out", eval_out, "output directory");
  c_eval->add_option("--protocol", ev.protocol, "kfold | louo | crossenv");
  c_eval->add_option("--k", ev.k, "folds for kfold");
  c_eval->add_option("--train-env", ev.train_env, "crossenv training environment");
  c_eval->add_option("--test-env", ev.test_env, "crossenv test environment");
  c_eval->add_option("--jobs", ev.jobs, "parallel splits");
  add_pipeline_options(c_eval);
  add_model_options(c_eval);
  add_train_options(c_eval);
  c_eval->add_option("--from-run", eval_from_run, "re-run from a run.json");

  // sweep
  std::string sweep_data, sweep_out = "out/sweep", sweep_axis = "overlap", sweep_from_run;
  std::string sweep_values = "0,25,50,62.5,75,87.5,93.75,99";
  auto* c_sweep = app.add_subcommand("sweep", "eval across one varying parameter");
  c_sweep->fallthrough();  // --seed may follow the subcommand
  c_sweep->add_option("--data", sweep_data, "dataset directory");
  c_sweep->add_option("--out", sweep_out, "output directory");
  c_sweep->add_option("--axis", sweep_axis, "overlap | placement | window");
  c_sweep->add_option("--values", sweep_values, "comma-separated axis values");
  c_sweep->add_option("--protocol", ev.protocol, "kfold | louo | crossenv");
  c_sweep->add_option("--k", ev.k, "folds for kfold");
  c_sweep->add_option("--jobs", ev.jobs, "parallel splits");
  add_pipeline_options(c_sweep);
  add_model_options(c_sweep);
  add_train_options(c_sweep);
  c_sweep->add_option("--from-run", sweep_from_run, "re-run from a run.json");

  // infer
  std::string infer_model, infer_window;
  auto* c_infer = app.add_subcommand("infer", "classify one preprocessed window");
  c_infer->fallthrough();  // --seed may follow the subcommand
  c_infer->add_option("--model", infer_model, "model file from train")->required();
  c_infer->add_option("--window", infer_window, "window csv (filtered volts)")->required();

  try {
    app.parse(argc, argv);

    if (c_sim->parsed()) {
      if (!sim_from_run.empty()) {
        const json run = load_run_json(sim_from_run, "simulate");
        SimulateOptions replay =
            simulate_from_json(run.at("config"), run.at("seed").get<uint64_t>());
        // an explicit --out redirects the replay
        if (c_sim->count("--out") > 0) replay.out = sim.out;
        run_simulate(replay);
      } else {
        sim.seed = resolve_seed(seed_flag);
        run_simulate(sim);
      }
    } else if (c_train->parsed()) {
      uint64_t seed = resolve_seed(seed_flag);
      if (!train_from_run.empty()) {
        const json run = load_run_json(train_from_run, "train");
        const json& cfg = run.at("config");
        train_data = cfg.at("data").get<std::string>();
        if (c_train->count("--out") == 0) train_out = cfg.at("out").get<std::string>();
        apply_pipeline_json(cfg.at("pipeline"), pipe);
        apply_model_json(cfg.at("model"), model);
        apply_train_json(cfg.at("train"), tr);
        seed = run.at("seed").get<uint64_t>();
      }
      if (train_data.empty()) throw ConfigError("train: --data is required");
      run_train(train_data, train_out, pipe, model, tr, seed);
    } else if (c_eval->parsed()) {
      uint64_t seed = resolve_seed(seed_flag);
      if (!eval_from_run.empty()) {
        const json run = load_run_json(eval_from_run, "eval");
        const json& cfg = run.at("config");
        eval_data = cfg.at("data").get<std::string>();
        if (c_eval->count("--out") == 0) eval_out = cfg.at("out").get<std::string>();
        apply_pipeline_json(cfg.at("pipeline"), pipe);
        apply_model_json(cfg.at("model"), model);
        apply_train_json(cfg.at("train"), tr);
        ev.protocol = cfg.at("protocol").get<std::string>();
        ev.k = cfg.at("k").get<int>();
        ev.train_env = cfg.at("train_env").get<std::string>();
        ev.test_env = cfg.at("test_env").get<std::string>();
        seed = run.at("seed").get<uint64_t>();
      }
      if (eval_data.empty()) throw ConfigError("eval: --data is required");
      run_eval(eval_data, eval_out, pipe, model, tr, ev, seed);
    } else if (c_sweep->parsed()) {
      uint64_t seed = resolve_seed(seed_flag);
      std::vector<std::string> values;
      if (!sweep_from_run.empty()) {
        const json run = load_run_json(sweep_from_run, "sweep");
        const json& cfg = run.at("config");
        sweep_data = cfg.at("data").get<std::string>();
        if (c_sweep->count("--out") == 0) sweep_out = cfg.at("out").get<std::string>();
        apply_pipeline_json(cfg.at("pipeline"), pipe);
        apply_model_json(cfg.at("model"), model);
        apply_train_json(cfg.at("train"), tr);
        ev.protocol = cfg.at("protocol").get<std::string>();
        ev.k = cfg.at("k").get<int>();
        sweep_axis = cfg.at("axis").get<std::string>();
        values = cfg.at("values").get<std::vector<std::string>>();
        seed = run.at("seed").get<uint64_t>();
      } else {
        size_t start = 0;
        while (start <= sweep_values.size()) {
          const size_t comma = sweep_values.find(',', start);
          values.push_back(
              sweep_values.substr(start, comma == std::string::npos ? comma : comma - start));
          if (comma == std::string::npos) break;
          start = comma + 1;
        }
      }
      if (sweep_data.empty()) throw ConfigError("sweep: --data is required");
      run_sweep(sweep_data, sweep_out, pipe, model, tr, ev, sweep_axis, values, seed);
    } else if (c_infer->parsed()) {
      run_infer(infer_model, infer_window);
    }
    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
