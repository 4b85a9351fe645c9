#pragma once

#include "ctg/model.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ctg {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout: 8-byte magic "PCTGCKPT", u32 format version, u64 header length,
// JSON header (config + tensor table), then every tensor's values as
// little-endian IEEE-754 doubles in row-major order.
inline constexpr char kCheckpointMagic[8] = {'P', 'C', 'T', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::string& path);
std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& config);

Checkpoint load_checkpoint(const std::string& path);
Checkpoint deserialize_checkpoint(const std::string& bytes);

}  // namespace ctg
