#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "solstep/features.hpp"
#include "solstep/model.hpp"

namespace solstep {

// Model file layout: 8 magic bytes "SOLSTEP1", a little-endian uint32 header
// length, a UTF-8 JSON header (model config, feature spec, placement, class
// list, normalizer statistics, seed), then every weight tensor concatenated
// row-major as little-endian float64 in visit_tensors order.
inline constexpr char kModelMagic[8] = {'S', 'O', 'L', 'S', 'T', 'E', 'P', '1'};

struct ModelBundle {
  ModelWeights weights;
  ModelConfig config;
  FeatureSpec feature_spec;
  PlacementConfig placement;
  std::vector<std::string> classes;
  Normalizer normalizer;
  uint64_t seed = 0;
};

std::string serialize_model(const ModelBundle& bundle);
void save_model(const std::string& path, const ModelBundle& bundle);

ModelBundle deserialize_model(std::string_view bytes);
ModelBundle load_model(const std::string& path);

}  // namespace solstep
