#include "ctg/config.hpp"

#include <functional>
#include <map>

namespace ctg {

namespace {

using Setters = std::map<std::string, std::function<void(const Json&)>>;

void apply(const Json& j, const Setters& setters, const char* section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("unknown key '" + key + "' in " + section + " config");
    try {
      it->second(value);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string(section) + "." + key + ": " + e.what());
    }
  }
}

template <typename T>
std::function<void(const Json&)> set(T& field) {
  return [&field](const Json& v) { field = v.get<T>(); };
}

std::function<void(const Json&)> set_range(data::Range& r) {
  return [&r](const Json& v) {
    if (!v.is_array() || v.size() != 2) throw ConfigError("range must be a [lo, hi] pair");
    r.lo = v[0].get<double>();
    r.hi = v[1].get<double>();
  };
}

}  // namespace

Json to_json(const ModelConfig& c) {
  return {{"seq_len", c.seq_len},         {"patch_len", c.patch_len},
          {"stride", c.stride},           {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},         {"d_model", c.d_model},
          {"d_ff", c.d_ff},               {"dropout", c.dropout},
          {"fc_dropout", c.fc_dropout},   {"attn_dropout", c.attn_dropout},
          {"activation", to_string(c.activation)},
          {"share_backbone", c.share_backbone},
          {"kernel_size", c.kernel_size}};
}

Json to_json(const TrainConfig& c) {
  Json j = {{"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"seed", c.seed}};
  j["finetune_from"] = c.finetune_from ? Json(*c.finetune_from) : Json(nullptr);
  return j;
}

Json to_json(const data::GenSpec& s) {
  auto range = [](const data::Range& r) { return Json::array({r.lo, r.hi}); };
  return {{"n_per_class", s.n_per_class},
          {"seed", s.seed},
          {"baseline_bpm", range(s.baseline_bpm)},
          {"npo_variability", range(s.npo_variability)},
          {"apo_variability", range(s.apo_variability)},
          {"npo_acceleration_rate", s.npo_acceleration_rate},
          {"apo_acceleration_rate", s.apo_acceleration_rate},
          {"npo_deceleration_rate", s.npo_deceleration_rate},
          {"contraction_rate", s.contraction_rate},
          {"apo_late_deceleration_prob", s.apo_late_deceleration_prob},
          {"late_deceleration_depth", range(s.late_deceleration_depth)},
          {"late_deceleration_lag", range(s.late_deceleration_lag)},
          {"missing_rate", s.missing_rate},
          {"max_days_to_delivery", s.max_days_to_delivery},
          {"drift_slope", s.drift_slope}};
}

void apply_json(ModelConfig& c, const Json& j) {
  apply(j,
        {{"seq_len", set(c.seq_len)},
         {"patch_len", set(c.patch_len)},
         {"stride", set(c.stride)},
         {"n_layers", set(c.n_layers)},
         {"n_heads", set(c.n_heads)},
         {"d_model", set(c.d_model)},
         {"d_ff", set(c.d_ff)},
         {"dropout", set(c.dropout)},
         {"fc_dropout", set(c.fc_dropout)},
         {"attn_dropout", set(c.attn_dropout)},
         {"activation", [&c](const Json& v) {
            try {
              c.activation = parse_activation(v.get<std::string>());
            } catch (const TensorError& e) {
              throw ConfigError(e.what());
            }
          }},
         {"share_backbone", set(c.share_backbone)},
         {"kernel_size", set(c.kernel_size)}},
        "model");
}

void apply_json(TrainConfig& c, const Json& j) {
  apply(j,
        {{"learning_rate", set(c.learning_rate)},
         {"batch_size", set(c.batch_size)},
         {"max_epochs", set(c.max_epochs)},
         {"patience", set(c.patience)},
         {"seed", set(c.seed)},
         {"finetune_from", [&c](const Json& v) {
            if (v.is_null())
              c.finetune_from.reset();
            else
              c.finetune_from = v.get<std::string>();
          }}},
        "train");
}

void apply_json(data::GenSpec& s, const Json& j) {
  apply(j,
        {{"n_per_class", set(s.n_per_class)},
         {"seed", set(s.seed)},
         {"baseline_bpm", set_range(s.baseline_bpm)},
         {"npo_variability", set_range(s.npo_variability)},
         {"apo_variability", set_range(s.apo_variability)},
         {"npo_acceleration_rate", set(s.npo_acceleration_rate)},
         {"apo_acceleration_rate", set(s.apo_acceleration_rate)},
         {"npo_deceleration_rate", set(s.npo_deceleration_rate)},
         {"contraction_rate", set(s.contraction_rate)},
         {"apo_late_deceleration_prob", set(s.apo_late_deceleration_prob)},
         {"late_deceleration_depth", set_range(s.late_deceleration_depth)},
         {"late_deceleration_lag", set_range(s.late_deceleration_lag)},
         {"missing_rate", set(s.missing_rate)},
         {"max_days_to_delivery", set(s.max_days_to_delivery)},
         {"drift_slope", set(s.drift_slope)}},
        "generator");
}

std::vector<std::string> preset_names() { return {"paper-best", "tiny"}; }

Preset preset(const std::string& name) {
  Preset p;
  p.name = name;
  if (name == "paper-best") {
    p.model.seq_len = 960;
    p.model.n_layers = 6;
    p.model.n_heads = 4;
    p.model.d_model = 512;
    p.model.d_ff = 128;
    p.model.dropout = 0.1;
    p.model.fc_dropout = 0.4;
    p.model.attn_dropout = 0.2;
    p.model.patch_len = 16;
    p.model.stride = 16;
    p.model.kernel_size = 15;
    p.model.activation = Activation::relu;
    p.train.batch_size = 48;
    p.train.learning_rate = 1e-4;
    p.train.max_epochs = 50;
    p.train.patience = 10;
    return p;
  }
  if (name == "tiny") {
    p.model.seq_len = 32;
    p.model.patch_len = 8;
    p.model.stride = 8;
    p.model.n_layers = 1;
    p.model.n_heads = 2;
    p.model.d_model = 8;
    p.model.d_ff = 16;
    p.model.dropout = 0.0;
    p.model.fc_dropout = 0.0;
    p.model.attn_dropout = 0.0;
    p.model.activation = Activation::gelu;
    p.train.batch_size = 8;
    p.train.learning_rate = 1e-2;
    p.train.max_epochs = 200;
    return p;
  }
  throw ConfigError("unknown preset '" + name + "'");
}

}  // namespace ctg
