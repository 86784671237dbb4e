#include "solstep/features.hpp"

#include <algorithm>
#include <set>

namespace solstep {

const char* to_string(PlacementTag t) {
  switch (t) {
    case PlacementTag::F: return "F";
    case PlacementTag::FF: return "FF";
    case PlacementTag::W: return "W";
    case PlacementTag::WW: return "WW";
    case PlacementTag::WF: return "WF";
    case PlacementTag::WFCross: return "WF_cross";
    case PlacementTag::WWFF: return "WWFF";
  }
  return "?";
}

PlacementTag placement_tag_from_string(std::string_view s) {
  if (s == "F") return PlacementTag::F;
  if (s == "FF") return PlacementTag::FF;
  if (s == "W") return PlacementTag::W;
  if (s == "WW") return PlacementTag::WW;
  if (s == "WF") return PlacementTag::WF;
  if (s == "WF_cross") return PlacementTag::WFCross;
  if (s == "WWFF") return PlacementTag::WWFF;
  throw ConfigError("unknown placement tag '" + std::string(s) + "'");
}

PlacementConfig::PlacementConfig(PlacementTag t) : tag(t) {
  switch (t) {
    case PlacementTag::F: channels = {Placement::LeftFoot}; break;
    case PlacementTag::FF: channels = {Placement::LeftFoot, Placement::RightFoot}; break;
    case PlacementTag::W: channels = {Placement::LeftWrist}; break;
    case PlacementTag::WW: channels = {Placement::LeftWrist, Placement::RightWrist}; break;
    case PlacementTag::WF: channels = {Placement::LeftWrist, Placement::LeftFoot}; break;
    case PlacementTag::WFCross: channels = {Placement::LeftWrist, Placement::RightFoot}; break;
    case PlacementTag::WWFF:
      channels = {Placement::LeftWrist, Placement::RightWrist, Placement::LeftFoot,
                  Placement::RightFoot};
      break;
  }
  // keep canonical LW, RW, LF, RF order
  std::sort(channels.begin(), channels.end(),
            [](Placement a, Placement b) { return static_cast<int>(a) < static_cast<int>(b); });
}

SyncedRecording select_channels(const SyncedRecording& rec, const PlacementConfig& placement) {
  SyncedRecording out;
  out.grid_rate_hz = rec.grid_rate_hz;
  out.t0_s = rec.t0_s;
  out.manifest = rec.manifest;
  out.values.resize(rec.values.rows(), static_cast<Eigen::Index>(placement.channels.size()));
  Eigen::Index dst = 0;
  for (Placement p : placement.channels) {
    const auto it = std::find(rec.channels.begin(), rec.channels.end(), p);
    if (it == rec.channels.end()) {
      throw DataError(std::string("recording lacks placement ") + to_string(p));
    }
    const auto src = static_cast<Eigen::Index>(it - rec.channels.begin());
    out.values.col(dst++) = rec.values.col(src);
    out.channels.push_back(p);
  }
  return out;
}

const char* to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::PairwiseOnly: return "pairwise";
    case FeatureMode::TemporalOnly: return "temporal";
    case FeatureMode::Both: return "both";
    case FeatureMode::RawPassthrough: return "raw";
  }
  return "?";
}

FeatureMode feature_mode_from_string(std::string_view s) {
  if (s == "pairwise") return FeatureMode::PairwiseOnly;
  if (s == "temporal") return FeatureMode::TemporalOnly;
  if (s == "both") return FeatureMode::Both;
  if (s == "raw") return FeatureMode::RawPassthrough;
  throw ConfigError("unknown feature mode '" + std::string(s) + "'");
}

int FeatureSpec::dim(int m) const {
  if (m < 1) throw ConfigError("features: need at least one channel");
  const int pairs = m * (m - 1) / 2;
  switch (mode) {
    case FeatureMode::PairwiseOnly:
      if (m < 2) throw ConfigError("features: pairwise mode needs at least 2 channels");
      return pairs;
    case FeatureMode::TemporalOnly: return m;
    case FeatureMode::Both: return pairs + m;
    case FeatureMode::RawPassthrough: return m;
  }
  return 0;
}

Vector pairwise_diff(const Vector& scan) {
  const Eigen::Index m = scan.size();
  if (m < 2) throw ConfigError("pairwise_diff: need at least 2 channels");
  Vector out(m * (m - 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index a = 0; a < m; ++a) {
    for (Eigen::Index b = a + 1; b < m; ++b) {
      out[k++] = scan[a] - scan[b];
    }
  }
  return out;
}

Matrix temporal_diff(const Matrix& window) {
  Matrix out(window.rows(), window.cols());
  if (window.rows() == 0) return out;
  out.row(0).setZero();
  if (window.rows() > 1) {
    out.bottomRows(window.rows() - 1) =
        window.bottomRows(window.rows() - 1) - window.topRows(window.rows() - 1);
  }
  return out;
}

FeatureWindow featurize(const LabeledWindow& window, const FeatureSpec& spec) {
  const auto m = static_cast<int>(window.values.cols());
  const int d = spec.dim(m);
  FeatureWindow out;
  out.label = window.label;
  out.subject_id = window.subject_id;
  out.environment = window.environment;
  out.values.resize(window.values.rows(), d);

  switch (spec.mode) {
    case FeatureMode::RawPassthrough:
      out.values = window.values;
      break;
    case FeatureMode::TemporalOnly:
      out.values = temporal_diff(window.values);
      break;
    case FeatureMode::PairwiseOnly:
    case FeatureMode::Both: {
      for (Eigen::Index t = 0; t < window.values.rows(); ++t) {
        Eigen::Index k = 0;
        for (int a = 0; a < m; ++a) {
          for (int b = a + 1; b < m; ++b) {
            out.values(t, k++) = window.values(t, a) - window.values(t, b);
          }
        }
      }
      if (spec.mode == FeatureMode::Both) {
        out.values.rightCols(m) = temporal_diff(window.values);
      }
      break;
    }
  }
  if (!out.values.allFinite()) {
    throw NumericError("featurize: non-finite feature value");
  }
  return out;
}

std::vector<int> feature_columns_of_channel(FeatureMode mode, int m, int channel) {
  if (channel < 0 || channel >= m) throw ConfigError("feature_columns_of_channel: bad channel");
  std::vector<int> cols;
  const int pairs = m * (m - 1) / 2;
  const bool has_pairwise = mode == FeatureMode::PairwiseOnly || mode == FeatureMode::Both;
  const bool has_per_channel = mode != FeatureMode::PairwiseOnly;
  if (has_pairwise) {
    int k = 0;
    for (int a = 0; a < m; ++a) {
      for (int b = a + 1; b < m; ++b) {
        if (a == channel || b == channel) cols.push_back(k);
        ++k;
      }
    }
  }
  if (has_per_channel) {
    const int base = mode == FeatureMode::Both ? pairs : 0;
    cols.push_back(base + channel);
  }
  return cols;
}

Normalizer fit_normalizer(const std::vector<FeatureWindow>& train_windows) {
  if (train_windows.empty()) throw DataError("fit_normalizer: empty training set");
  const Eigen::Index d = train_windows.front().values.cols();
  Vector sum = Vector::Zero(d);
  Vector sum_sq = Vector::Zero(d);
  double count = 0.0;
  for (const auto& w : train_windows) {
    if (w.values.cols() != d) throw DataError("fit_normalizer: inconsistent feature dims");
    sum += w.values.colwise().sum().transpose();
    sum_sq += w.values.array().square().colwise().sum().matrix().transpose();
    count += static_cast<double>(w.values.rows());
  }
  Normalizer n;
  n.mean = sum / count;
  const Vector var = (sum_sq / count - n.mean.cwiseProduct(n.mean)).cwiseMax(0.0);
  n.std = var.cwiseSqrt().cwiseMax(1e-8);
  return n;
}

Matrix apply_normalizer(const Normalizer& n, const Matrix& values) {
  if (values.cols() != n.mean.size()) throw DataError("normalizer: feature dim mismatch");
  return (values.rowwise() - n.mean.transpose()).array().rowwise() /
         n.std.transpose().array();
}

void apply_normalizer_in_place(const Normalizer& n, std::vector<FeatureWindow>& windows) {
  for (auto& w : windows) w.values = apply_normalizer(n, w.values);
}

int FeatureDataset::label_index(const std::string& label) const {
  const auto it = std::lower_bound(classes.begin(), classes.end(), label);
  if (it == classes.end() || *it != label) {
    throw DataError("label '" + label + "' not in class vocabulary");
  }
  return static_cast<int>(it - classes.begin());
}

FeatureDataset make_feature_dataset(std::vector<FeatureWindow> windows, FeatureMode mode, int m,
                                    bool normalize) {
  FeatureDataset ds;
  ds.mode = mode;
  ds.n_channels = m;
  ds.normalize = normalize;
  std::set<std::string> labels;
  for (const auto& w : windows) labels.insert(w.label);
  ds.classes.assign(labels.begin(), labels.end());
  ds.windows = std::move(windows);
  return ds;
}

}  // namespace solstep
