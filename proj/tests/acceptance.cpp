// Acceptance suite: every release criterion, one PASS/FAIL line each.
// Exits nonzero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <set>
#include <string>

#include "gradcheck_util.hpp"
#include "solstep/harness.hpp"
#include "solstep/model_io.hpp"
#include "solstep/synthgen.hpp"

using namespace solstep;
using namespace solstep::testing;

namespace {

int g_failed = 0;

void criterion(const std::string& name, bool ok, const std::string& detail) {
  std::printf("[%s] %s — %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failed;
}

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

constexpr double kProtocolBudgetS = 600.0;  // ten minutes per protocol

// the default evaluation dataset: six subjects, three minutes per activity,
// outdoor, fully separable signatures
SynthDataset default_dataset(int n_classes, uint64_t seed) {
  SceneConfig scene;
  scene.seed = seed;
  return generate_dataset(6, separable_activity_models(n_classes, 0.0), 180.0, scene);
}

// epochs trimmed against the runtime budget; all other training knobs stay
// at their defaults
TrainConfig accept_train_config() {
  TrainConfig cfg;
  cfg.max_epochs = 2;
  return cfg;
}

struct ProtocolOutcome {
  double mean_accuracy = 0.0;
  double seconds = 0.0;
};

ProtocolOutcome timed_protocol(const FeatureDataset& ds, const SplitPlan& plan) {
  const double t0 = now_s();
  const EvalReport report = run_protocol(ds, plan, ModelConfig{}, accept_train_config(), 1);
  return {report.mean_accuracy, now_s() - t0};
}

char detail_buf[256];

const char* fmt(const char* format, double a, double b = 0.0, double c = 0.0) {
  std::snprintf(detail_buf, sizeof(detail_buf), format, a, b, c);
  return detail_buf;
}

// ---- criteria ----

void check_generator_relative_accuracy() {
  PipelineConfig pcfg;  // table defaults

  const FeatureDataset ds4 = build_dataset(default_dataset(4, 1), pcfg);
  SplitPlan kfold;
  kfold.k = 5;
  kfold.seed = 42;
  const ProtocolOutcome four = timed_protocol(ds4, kfold);
  criterion("5-fold accuracy, 4 activities (>= 0.90)",
            four.mean_accuracy >= 0.90 && four.seconds <= kProtocolBudgetS,
            fmt("mean accuracy %.4f in %.0f s (budget %.0f s)", four.mean_accuracy, four.seconds,
                kProtocolBudgetS));

  const FeatureDataset ds7 = build_dataset(default_dataset(7, 1), pcfg);
  const ProtocolOutcome seven = timed_protocol(ds7, kfold);
  criterion("5-fold accuracy, 7 activities (>= 0.75)",
            seven.mean_accuracy >= 0.75 && seven.seconds <= kProtocolBudgetS,
            fmt("mean accuracy %.4f in %.0f s (budget %.0f s)", seven.mean_accuracy,
                seven.seconds, kProtocolBudgetS));

  SplitPlan louo;
  louo.protocol = Protocol::LeaveOneUserOut;
  louo.seed = 42;
  const ProtocolOutcome held_out = timed_protocol(ds4, louo);
  criterion("leave-one-user-out mean within 15 points of 5-fold",
            held_out.mean_accuracy >= four.mean_accuracy - 0.15 &&
                held_out.seconds <= kProtocolBudgetS,
            fmt("louo %.4f vs kfold %.4f, %.0f s", held_out.mean_accuracy, four.mean_accuracy,
                held_out.seconds));

  // indoor differs from outdoor only in ambient level (and draw seed)
  SceneConfig indoor;
  indoor.environment = Environment::Indoor;
  indoor.ambient_base = 0.9;
  indoor.seed = 2;
  SynthDataset both = default_dataset(4, 1);
  const SynthDataset indoor_ds =
      generate_dataset(6, separable_activity_models(4, 0.0), 180.0, indoor);
  both.sessions.insert(both.sessions.end(), indoor_ds.sessions.begin(),
                       indoor_ds.sessions.end());
  const FeatureDataset ds_env = build_dataset(both, pcfg);
  SplitPlan cross;
  cross.protocol = Protocol::CrossEnvironment;
  cross.train_env = Environment::Outdoor;
  cross.test_env = Environment::Indoor;
  cross.seed = 42;
  const ProtocolOutcome env = timed_protocol(ds_env, cross);
  criterion("cross-environment outdoor->indoor (>= 0.75)",
            env.mean_accuracy >= 0.75 && env.seconds <= kProtocolBudgetS,
            fmt("accuracy %.4f in %.0f s", env.mean_accuracy, env.seconds));
}

void check_gradient_oracle() {
  Rng meta(20240);
  double worst = 0.0;
  int64_t params = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const ModelConfig cfg = random_micro_config(meta);
    const int length = 3 + static_cast<int>(meta.below(6));  // <= 8
    const auto batch = random_batch(meta, 2, length, cfg.d_in);
    const auto labels = random_labels(meta, 2, cfg.n_classes);
    const auto res = gradcheck(cfg, batch, labels, 5000 + static_cast<uint64_t>(trial));
    worst = std::max(worst, res.max_rel_error);
    params += res.params_checked;
  }
  criterion("gradients vs central finite differences (20 micro-configs, < 1e-4)", worst < 1e-4,
            fmt("max relative error %.3g over %.0f parameters", worst,
                static_cast<double>(params)));
}

void check_windowing_oracle() {
  long mismatches = 0;
  long cases = 0;
  for (int length = 2; length <= 50; ++length) {
    for (int overlap = 0; overlap <= length - 1; ++overlap) {
      const WindowSpec spec{length, overlap};
      for (int total = length; total <= 200; ++total) {
        int brute = 0;
        for (int start = 0; start + length <= total; start += spec.stride()) ++brute;
        if (window_count(total, spec) != brute) ++mismatches;
        ++cases;
      }
    }
  }
  criterion("window-count formula equals brute force (L in [2,50], O in [0,L-1], T in [L,200])",
            mismatches == 0, fmt("%.0f cases, %.0f mismatches", static_cast<double>(cases),
                                 static_cast<double>(mismatches)));
}

double sine_gain(double freq_hz, const FilterSpec& spec) {
  const auto n = static_cast<Eigen::Index>(60.0 * spec.sample_rate_hz);
  Matrix x(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    x(i, 0) = std::sin(2.0 * kPi * freq_hz * static_cast<double>(i) / spec.sample_rate_hz);
  }
  return lowpass(x, spec).col(0).tail(n / 2).cwiseAbs().maxCoeff();
}

void check_filter_fixtures() {
  FilterSpec spec;  // 5 Hz cutoff, 23.1 Hz rate, order 2

  const Matrix constant = Matrix::Constant(300, 1, 0.5);
  const double dc_err = (lowpass(constant, spec).array() - 0.5).abs().maxCoeff() / 0.5;
  criterion("filter DC gain 1 +- 1e-3", dc_err < 1e-3, fmt("max relative error %.3g", dc_err));

  const double g1 = sine_gain(1.0, spec);
  const double t1 = 1.0 / std::sqrt(1.0 + std::pow(0.2, 4.0));
  const double db1 = 20.0 * std::log10(g1 / t1);
  criterion("filter 1 Hz gain within 1 dB of analytic", std::abs(db1) < 1.0,
            fmt("gain %.6f vs %.6f (%.3f dB)", g1, t1, db1));

  const double g10 = sine_gain(10.0, spec);
  const double t10 = 1.0 / std::sqrt(17.0);
  criterion("filter 10 Hz gain = 1/sqrt(17) +- 10%", g10 > 0.9 * t10 && g10 < 1.1 * t10,
            fmt("gain %.6f vs %.6f (ratio %.4f)", g10, t10, g10 / t10));
}

void check_invariances() {
  Rng rng(7);

  // pairwise features ignore per-scan common offsets (pre-quantization)
  double worst_pair = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Vector scan(4);
    for (int i = 0; i < 4; ++i) scan[i] = rng.uniform(0.0, 3.3);
    const double delta = rng.uniform(-5.0, 5.0);
    worst_pair = std::max(worst_pair, (pairwise_diff(scan) -
                                       pairwise_diff((scan.array() + delta).matrix()))
                                          .cwiseAbs()
                                          .maxCoeff());
  }
  criterion("pairwise features invariant to common offsets (<= 1e-12)", worst_pair <= 1e-12,
            fmt("max deviation %.3g", worst_pair));

  // end to end through the generator: quantization is the only leak
  SceneConfig bright;
  bright.seed = 11;
  bright.ambient_base = 1.6;
  SceneConfig dim = bright;
  dim.ambient_base = 0.9;
  dim.environment = Environment::Indoor;
  const auto models = default_activity_models(4);
  const SyncedRecording ra = ingest_session(generate_session("s01", models, 6.0, bright));
  const SyncedRecording rb = ingest_session(generate_session("s01", models, 6.0, dim));
  double worst_e2e = 0.0;
  for (Eigen::Index k = 0; k < ra.samples(); ++k) {
    worst_e2e = std::max(worst_e2e, (pairwise_diff(ra.values.row(k).transpose()) -
                                     pairwise_diff(rb.values.row(k).transpose()))
                                        .cwiseAbs()
                                        .maxCoeff());
  }
  const double bound = 2.0 * kAdcVref / 1023.0;
  criterion("ambient shift leaks only quantization into pairwise features (<= 2 LSB)",
            worst_e2e <= bound, fmt("max deviation %.3g, bound %.3g", worst_e2e, bound));

  // temporal differences ignore per-channel constants
  Matrix win(20, 4);
  for (Eigen::Index i = 0; i < win.size(); ++i) win(i) = rng.uniform(0.0, 3.0);
  Matrix shifted = win;
  for (int c = 0; c < 4; ++c) shifted.col(c).array() += rng.uniform(-2.0, 2.0);
  const double worst_temp = (temporal_diff(win) - temporal_diff(shifted)).cwiseAbs().maxCoeff();
  criterion("temporal features invariant to per-channel constants (<= 1e-12)",
            worst_temp <= 1e-12, fmt("max deviation %.3g", worst_temp));

  // softmax shift invariance
  double worst_soft = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Vector logits(6);
    for (int i = 0; i < 6; ++i) logits[i] = rng.uniform(-20.0, 20.0);
    const double c = rng.uniform(-50.0, 50.0);
    worst_soft = std::max(
        worst_soft,
        (softmax(logits) - softmax((logits.array() + c).matrix())).cwiseAbs().maxCoeff());
  }
  criterion("softmax shift invariance (<= 1e-12)", worst_soft <= 1e-12,
            fmt("max deviation %.3g", worst_soft));

  // argmax tie rule
  Vector tied(4);
  tied << 0.3, 0.3, 0.3, 0.1;
  Vector two_way(3);
  two_way << 1.0, 2.0, 2.0;
  const bool ties_ok = argmax_lowest(tied) == 0 && argmax_lowest(two_way) == 1;
  criterion("argmax ties resolve to the lowest class index", ties_ok,
            ties_ok ? "both fixtures" : "fixture mismatch");
}

FeatureDataset small_real_dataset(uint64_t seed) {
  PipelineConfig pcfg;
  return build_dataset(make_separable_dataset(2, 0.0, 3, 10.0, seed), pcfg);
}

void check_split_properties() {
  const FeatureDataset ds = small_real_dataset(31);
  const int n = static_cast<int>(ds.windows.size());

  SplitPlan plan;
  plan.k = 5;
  plan.seed = 9;
  const auto folds = split(ds, plan);
  bool ok = folds.size() == 5;
  std::set<int> seen;
  size_t smallest = ds.windows.size(), largest = 0;
  for (const auto& s : folds) {
    smallest = std::min(smallest, s.test_ids.size());
    largest = std::max(largest, s.test_ids.size());
    for (const int id : s.test_ids) ok = ok && seen.insert(id).second;
    std::set<int> train(s.train_ids.begin(), s.train_ids.end());
    for (const int id : s.test_ids) ok = ok && train.count(id) == 0;
  }
  ok = ok && static_cast<int>(seen.size()) == n && largest - smallest <= 1;
  criterion("k-fold folds are disjoint, covering, balanced", ok,
            fmt("%.0f windows over 5 folds, size spread %.0f", static_cast<double>(n),
                static_cast<double>(largest - smallest)));

  SplitPlan louo;
  louo.protocol = Protocol::LeaveOneUserOut;
  bool louo_ok = true;
  for (const auto& s : split(ds, louo)) {
    for (const int id : s.test_ids) {
      louo_ok = louo_ok && ds.windows[static_cast<size_t>(id)].subject_id == s.id;
    }
    for (const int id : s.train_ids) {
      louo_ok = louo_ok && ds.windows[static_cast<size_t>(id)].subject_id != s.id;
    }
  }
  criterion("leave-one-user-out excludes the held-out subject", louo_ok, "3 subjects");

  // cross-environment exclusion on a mixed dataset
  PipelineConfig pcfg;
  SceneConfig indoor;
  indoor.environment = Environment::Indoor;
  indoor.ambient_base = 0.9;
  indoor.seed = 77;
  SynthDataset mixed = make_separable_dataset(2, 0.0, 2, 8.0, 76);
  const SynthDataset extra =
      generate_dataset(2, separable_activity_models(2, 0.0), 8.0, indoor);
  mixed.sessions.insert(mixed.sessions.end(), extra.sessions.begin(), extra.sessions.end());
  const FeatureDataset ds_env = build_dataset(mixed, pcfg);
  SplitPlan cross;
  cross.protocol = Protocol::CrossEnvironment;
  cross.train_env = Environment::Outdoor;
  cross.test_env = Environment::Indoor;
  bool cross_ok = true;
  for (const auto& s : split(ds_env, cross)) {
    for (const int id : s.train_ids) {
      cross_ok =
          cross_ok && ds_env.windows[static_cast<size_t>(id)].environment == Environment::Outdoor;
    }
    for (const int id : s.test_ids) {
      cross_ok =
          cross_ok && ds_env.windows[static_cast<size_t>(id)].environment == Environment::Indoor;
    }
  }
  criterion("cross-environment split keeps environments apart", cross_ok, "outdoor -> indoor");

  // leakage guard: poisoned test folds leave the normalizer bit-identical
  FeatureDataset poisoned = ds;
  const auto& fold0 = folds[0];
  auto train_windows = [&](const FeatureDataset& d) {
    std::vector<FeatureWindow> out;
    for (const int id : fold0.train_ids) out.push_back(d.windows[static_cast<size_t>(id)]);
    return out;
  };
  const Normalizer clean = fit_normalizer(train_windows(ds));
  for (const int id : fold0.test_ids) {
    poisoned.windows[static_cast<size_t>(id)].values.array() += 1e6;
  }
  const Normalizer dirty = fit_normalizer(train_windows(poisoned));
  const bool leak_ok =
      std::memcmp(clean.mean.data(), dirty.mean.data(),
                  static_cast<size_t>(clean.mean.size()) * sizeof(double)) == 0 &&
      std::memcmp(clean.std.data(), dirty.std.data(),
                  static_cast<size_t>(clean.std.size()) * sizeof(double)) == 0;
  criterion("normalizer ignores poisoned test folds (bit-identical)", leak_ok,
            leak_ok ? "statistics unchanged" : "statistics drifted");
}

void check_determinism() {
  const FeatureDataset ds = small_real_dataset(53);

  ModelConfig mcfg;
  mcfg.num_blocks = 1;
  mcfg.num_heads = 2;
  mcfg.head_size = 8;
  mcfg.mlp_units = 16;
  mcfg.d_in = ds.dim();
  mcfg.n_classes = static_cast<int>(ds.classes.size());
  TrainConfig tcfg;
  tcfg.max_epochs = 2;
  tcfg.batch_size = 32;
  tcfg.seed = 99;

  std::vector<FeatureWindow> train_set(ds.windows.begin(), ds.windows.end() - 8);
  std::vector<FeatureWindow> val_set(ds.windows.end() - 8, ds.windows.end());

  auto bundle_of = [&](const TrainResult& r) {
    ModelBundle b;
    b.weights = r.weights;
    b.config = mcfg;
    b.feature_spec = FeatureSpec{ds.mode, ds.normalize};
    b.placement = PlacementConfig(PlacementTag::WWFF);
    b.classes = ds.classes;
    b.normalizer = r.normalizer;
    b.seed = tcfg.seed;
    return serialize_model(b);
  };
  const std::string file_a =
      bundle_of(train(train_set, val_set, mcfg, tcfg, ds.classes, ds.mode, ds.n_channels, true));
  const std::string file_b =
      bundle_of(train(train_set, val_set, mcfg, tcfg, ds.classes, ds.mode, ds.n_channels, true));
  criterion("identical seed gives byte-identical model files", file_a == file_b,
            fmt("%.0f bytes", static_cast<double>(file_a.size())));

  SplitPlan plan;
  plan.k = 3;
  plan.seed = 5;
  ModelConfig auto_cfg;  // d_in and classes resolved per split
  auto_cfg.num_blocks = 1;
  auto_cfg.num_heads = 2;
  auto_cfg.head_size = 8;
  auto_cfg.mlp_units = 16;
  const std::string serial = report_to_json(run_protocol(ds, plan, auto_cfg, tcfg, 1));
  const std::string parallel = report_to_json(run_protocol(ds, plan, auto_cfg, tcfg, 3));
  criterion("reports byte-identical under parallel fold execution", serial == parallel,
            fmt("%.0f bytes", static_cast<double>(serial.size())));
}

void check_interpolation() {
  Rng rng(3);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    // Two devices on count-linear ramps with uneven sampling. Slopes are
    // multiples of 4 and timestamps multiples of 0.25 s so every reading
    // carries an exact integer count on its line.
    const double slope = 4.0 * static_cast<double>(1 + rng.below(2));  // counts stay in range
    const double b1 = static_cast<double>(rng.below(50));
    const double b2 = static_cast<double>(rng.below(50));
    DeviceStream s1, s2;
    s1.device_id = "a";
    s1.placement = Placement::LeftWrist;
    s2.device_id = "b";
    s2.placement = Placement::RightFoot;
    double t1 = 0.0;
    double t2 = 0.25 * static_cast<double>(rng.below(3));
    for (int i = 0; i < 40; ++i) {
      s1.readings.push_back({"a", Placement::LeftWrist, t1,
                             static_cast<int>(std::lround(slope * t1 + b1))});
      s2.readings.push_back({"b", Placement::RightFoot, t2,
                             static_cast<int>(std::lround(slope * t2 + b2))});
      t1 += 0.25 * static_cast<double>(1 + rng.below(3));  // uneven spacing
      t2 += 0.25 * static_cast<double>(1 + rng.below(3));
    }
    const auto rec = synchronize({s1, s2}, 23.1);
    for (Eigen::Index k = 0; k < rec.samples(); ++k) {
      const double t = rec.time_at(k);
      worst = std::max(worst,
                       std::abs(rec.values(k, 0) - (slope * t + b1) / 1023.0 * kAdcVref));
      worst = std::max(worst,
                       std::abs(rec.values(k, 1) - (slope * t + b2) / 1023.0 * kAdcVref));
    }
  }
  criterion("linear ramps interpolate exactly (<= 1e-9)", worst <= 1e-9,
            fmt("max deviation %.3g", worst));
}

}  // namespace

int main() {
  std::printf("acceptance suite\n");
  const double t0 = now_s();

  check_windowing_oracle();
  check_filter_fixtures();
  check_interpolation();
  check_invariances();
  check_split_properties();
  check_gradient_oracle();
  check_determinism();
  check_generator_relative_accuracy();

  std::printf("%s (%.0f s total)\n", g_failed == 0 ? "all criteria passed" : "CRITERIA FAILED",
              now_s() - t0);
  return g_failed == 0 ? 0 : 1;
}
