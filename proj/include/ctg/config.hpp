#pragma once

#include "ctg/data.hpp"
#include "ctg/model.hpp"
#include "ctg/train.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace ctg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Json = nlohmann::ordered_json;

Json to_json(const ModelConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const data::GenSpec& s);

// Overlay present keys onto an existing value; unknown keys throw.
void apply_json(ModelConfig& c, const Json& j);
void apply_json(TrainConfig& c, const Json& j);
void apply_json(data::GenSpec& s, const Json& j);

struct Preset {
  std::string name;
  ModelConfig model;
  TrainConfig train;
};

/// Names of the built-in presets.
std::vector<std::string> preset_names();
/// "paper-best": 6 layers, 4 heads, d=512, d_ff=128, dropouts 0.1/0.4/0.2,
/// P=S=16, kernel size 15 (inert), ReLU, batch 48, learning rate 1e-4.
/// "tiny": L=32, P=S=8, d=8, 1 layer, 2 heads, no dropout.
Preset preset(const std::string& name);

}  // namespace ctg
