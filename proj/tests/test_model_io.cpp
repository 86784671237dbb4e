#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <limits>

#include "solstep/model_io.hpp"
#include "solstep/rng.hpp"

using namespace solstep;

namespace {

ModelBundle sample_bundle(uint64_t seed = 5) {
  ModelBundle b;
  b.config.num_blocks = 2;
  b.config.num_heads = 2;
  b.config.head_size = 6;
  b.config.ff_channels = 3;
  b.config.mlp_units = 8;
  b.config.n_classes = 3;
  b.config.d_in = 4;
  Rng rng(seed);
  b.weights = init_weights(b.config, rng);
  b.feature_spec = {FeatureMode::Both, true};
  b.placement = PlacementConfig(PlacementTag::WWFF);
  b.classes = {"cycling", "standing", "walking"};
  b.normalizer.mean = Vector::LinSpaced(4, 0.1, 0.4);
  b.normalizer.std = Vector::Constant(4, 1.5);
  b.seed = 77;
  return b;
}

}  // namespace

TEST_CASE("serialize/deserialize round-trips bit-exactly") {
  const ModelBundle b = sample_bundle();
  const std::string bytes = serialize_model(b);
  CHECK(bytes.substr(0, 8) == "SOLSTEP1");

  const ModelBundle back = deserialize_model(bytes);
  CHECK(serialize_model(back) == bytes);
  CHECK(back.classes == b.classes);
  CHECK(back.seed == 77);
  CHECK(back.config.head_size == 6);
  CHECK(back.feature_spec.mode == FeatureMode::Both);
  CHECK(back.placement.tag == PlacementTag::WWFF);
  CHECK((back.normalizer.mean - b.normalizer.mean).cwiseAbs().maxCoeff() == 0.0);

  // weights identical to the last bit
  std::string wa, wb;
  visit_tensors(b.weights, [&](const auto& t) {
    wa.append(reinterpret_cast<const char*>(t.data()), static_cast<size_t>(t.size()) * 8);
  });
  visit_tensors(back.weights, [&](const auto& t) {
    wb.append(reinterpret_cast<const char*>(t.data()), static_cast<size_t>(t.size()) * 8);
  });
  CHECK(wa == wb);
}

TEST_CASE("file round-trip") {
  const ModelBundle b = sample_bundle(9);
  const std::string path = "/tmp/solstep_test_model.bin";
  save_model(path, b);
  const ModelBundle back = load_model(path);
  CHECK(serialize_model(back) == serialize_model(b));
  CHECK_THROWS_AS(load_model("/tmp/definitely_missing_model.bin"), DataError);
}

TEST_CASE("loader validates magic, shapes, and finiteness") {
  const ModelBundle b = sample_bundle();
  const std::string bytes = serialize_model(b);

  // magic
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_model(bad), DataError);

  // truncated payload
  CHECK_THROWS_AS(deserialize_model(std::string_view(bytes).substr(0, bytes.size() - 9)),
                  DataError);

  // excess payload
  CHECK_THROWS_AS(deserialize_model(bytes + std::string(8, '\0')), DataError);

  // corrupted header json
  std::string broken = bytes;
  broken[13] = '?';
  CHECK_THROWS_AS(deserialize_model(broken), DataError);

  // non-finite weight refuses to serialize
  ModelBundle nan_bundle = sample_bundle();
  nan_bundle.weights.head.out_w(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(serialize_model(nan_bundle), NumericError);

  // non-finite weight in an otherwise valid file is rejected on load
  std::string nan_bytes = bytes;
  const double nan_value = std::numeric_limits<double>::quiet_NaN();
  std::memcpy(nan_bytes.data() + nan_bytes.size() - 8, &nan_value, 8);
  CHECK_THROWS_AS(deserialize_model(nan_bytes), NumericError);

  // class list disagreeing with n_classes
  ModelBundle short_classes = sample_bundle();
  short_classes.classes.pop_back();
  CHECK_THROWS_AS(serialize_model(short_classes), ConfigError);
}
