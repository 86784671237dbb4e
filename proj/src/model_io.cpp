#include "solstep/model_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "model files are little-endian; add byte swaps before porting");

namespace solstep {

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
  return {
      {"num_blocks", c.num_blocks},
      {"num_heads", c.num_heads},
      {"head_size", c.head_size},
      {"ff_channels", c.ff_channels},
      {"attn_dropout", c.attn_dropout},
      {"mlp_dropout", c.mlp_dropout},
      {"mlp_units", c.mlp_units},
      {"n_classes", c.n_classes},
      {"d_in", c.d_in},
      {"use_positional_encoding", c.use_positional_encoding},
  };
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_blocks = j.at("num_blocks").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.head_size = j.at("head_size").get<int>();
  c.ff_channels = j.at("ff_channels").get<int>();
  c.attn_dropout = j.at("attn_dropout").get<double>();
  c.mlp_dropout = j.at("mlp_dropout").get<double>();
  c.mlp_units = j.at("mlp_units").get<int>();
  c.n_classes = j.at("n_classes").get<int>();
  c.d_in = j.at("d_in").get<int>();
  c.use_positional_encoding = j.at("use_positional_encoding").get<bool>();
  return c;
}

void append_tensor_row_major(std::string& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double v = m(r, c);
      char buf[sizeof(double)];
      std::memcpy(buf, &v, sizeof(double));
      out.append(buf, sizeof(double));
    }
  }
}

void append_tensor_row_major(std::string& out, const Vector& v) {
  const char* p = reinterpret_cast<const char*>(v.data());
  out.append(p, static_cast<size_t>(v.size()) * sizeof(double));
}

}  // namespace

std::string serialize_model(const ModelBundle& bundle) {
  bundle.config.validate();
  if (static_cast<int>(bundle.classes.size()) != bundle.config.n_classes) {
    throw ConfigError("model file: class list does not match n_classes");
  }

  nlohmann::json header;
  header["format"] = "SOLSTEP1";
  header["tool_version"] = kToolVersion;
  header["model_config"] = config_to_json(bundle.config);
  header["feature_spec"] = {{"mode", to_string(bundle.feature_spec.mode)},
                            {"normalize", bundle.feature_spec.normalize}};
  header["placement"] = to_string(bundle.placement.tag);
  header["classes"] = bundle.classes;
  header["normalizer"] = {
      {"mean", std::vector<double>(bundle.normalizer.mean.data(),
                                   bundle.normalizer.mean.data() + bundle.normalizer.mean.size())},
      {"std", std::vector<double>(bundle.normalizer.std.data(),
                                  bundle.normalizer.std.data() + bundle.normalizer.std.size())}};
  header["seed"] = bundle.seed;
  const std::string header_text = header.dump();
  if (header_text.size() > 0xffffffffULL) throw ConfigError("model file: header too large");

  std::string out(kModelMagic, sizeof(kModelMagic));
  const auto len = static_cast<uint32_t>(header_text.size());
  char lenbuf[4];
  std::memcpy(lenbuf, &len, 4);
  out.append(lenbuf, 4);
  out += header_text;

  bool finite = true;
  visit_tensors(bundle.weights, [&](const auto& t) { finite = finite && t.allFinite(); });
  if (!finite) throw NumericError("model file: refusing to write non-finite weights");
  visit_tensors(bundle.weights, [&](const auto& t) { append_tensor_row_major(out, t); });
  return out;
}

void save_model(const std::string& path, const ModelBundle& bundle) {
  const std::string bytes = serialize_model(bundle);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("failed writing '" + path + "'");
}

ModelBundle deserialize_model(std::string_view bytes) {
  if (bytes.size() < sizeof(kModelMagic) + 4 ||
      std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
    throw DataError("model file: bad magic (expected SOLSTEP1)");
  }
  uint32_t header_len = 0;
  std::memcpy(&header_len, bytes.data() + sizeof(kModelMagic), 4);
  const size_t header_start = sizeof(kModelMagic) + 4;
  if (bytes.size() < header_start + header_len) {
    throw DataError("model file: truncated header");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(header_start, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file: invalid header json: ") + e.what());
  }

  ModelBundle bundle;
  try {
    bundle.config = config_from_json(header.at("model_config"));
    bundle.feature_spec.mode =
        feature_mode_from_string(header.at("feature_spec").at("mode").get<std::string>());
    bundle.feature_spec.normalize = header.at("feature_spec").at("normalize").get<bool>();
    bundle.placement =
        PlacementConfig(placement_tag_from_string(header.at("placement").get<std::string>()));
    bundle.classes = header.at("classes").get<std::vector<std::string>>();
    const auto mean = header.at("normalizer").at("mean").get<std::vector<double>>();
    const auto sd = header.at("normalizer").at("std").get<std::vector<double>>();
    bundle.normalizer.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    bundle.normalizer.std = Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
    bundle.seed = header.at("seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model file: missing or mistyped header field: ") + e.what());
  }
  bundle.config.validate();
  if (static_cast<int>(bundle.classes.size()) != bundle.config.n_classes) {
    throw DataError("model file: class list does not match n_classes");
  }

  bundle.weights = make_zero_weights(bundle.config);
  size_t expected = 0;
  visit_tensors(bundle.weights, [&](const auto& t) {
    expected += static_cast<size_t>(t.size()) * sizeof(double);
  });
  const size_t payload_start = header_start + header_len;
  if (bytes.size() - payload_start != expected) {
    throw DataError("model file: weight payload is " +
                    std::to_string(bytes.size() - payload_start) + " bytes, expected " +
                    std::to_string(expected));
  }

  const char* p = bytes.data() + payload_start;
  visit_tensors(bundle.weights, [&](auto& t) {
    for (Eigen::Index r = 0; r < t.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        double v;
        std::memcpy(&v, p, sizeof(double));
        p += sizeof(double);
        t(r, c) = v;
      }
    }
  });

  bool finite = true;
  visit_tensors(bundle.weights, [&](const auto& t) { finite = finite && t.allFinite(); });
  if (!finite) throw NumericError("model file: non-finite weight");
  return bundle;
}

ModelBundle load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open model file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

}  // namespace solstep
