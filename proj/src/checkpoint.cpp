#include "ctg/checkpoint.hpp"

#include "ctg/config.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace ctg {

namespace {

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + static_cast<std::size_t>(i)]))
         << (8 * i);
  return v;
}

}  // namespace

std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& config) {
  check_shapes(params, config);
  Json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = to_json(config);
  Json table = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, m] : named_tensors(params)) {
    table.push_back({{"name", name}, {"shape", {m->rows(), m->cols()}}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(m->size()) * 8;
  }
  header["tensors"] = std::move(table);
  header["data_bytes"] = offset;
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  put_le(out, kCheckpointVersion, 4);
  put_le(out, text.size(), 8);
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& [name, m] : named_tensors(params))
    for (Index i = 0; i < m->size(); ++i) put_le(out, std::bit_cast<std::uint64_t>(m->data()[i]), 8);
  return out;
}

void save_checkpoint(const ModelParams& params, const ModelConfig& config, const std::string& path) {
  const std::string bytes = serialize_checkpoint(params, config);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for checkpoint " + path);
}

namespace {

void read_tensors(const Json& header, const std::string& bytes, std::size_t data_start,
                  std::uint64_t data_bytes, ModelParams& params, std::string& problem) {
  const auto& table = header.at("tensors");
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Matrix& m) {
    if (!problem.empty()) return;
    if (i >= table.size()) {
      problem = "checkpoint lacks tensor '" + name + "'";
      return;
    }
    const auto& entry = table[i++];
    const auto shape = entry.at("shape").get<std::vector<Index>>();
    if (entry.at("name").get<std::string>() != name || shape.size() != 2 || shape[0] != m.rows() ||
        shape[1] != m.cols()) {
      problem = "checkpoint tensor '" + entry.at("name").get<std::string>() +
                "' inconsistent with config (expected '" + name + "')";
      return;
    }
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    if (offset + static_cast<std::uint64_t>(m.size()) * 8 > data_bytes) {
      problem = "checkpoint tensor '" + name + "' extends past the payload";
      return;
    }
    for (Index k = 0; k < m.size(); ++k)
      m.data()[k] = std::bit_cast<double>(get_le(bytes, data_start + offset + static_cast<std::size_t>(k) * 8, 8));
  });
  if (problem.empty() && i != table.size()) problem = "checkpoint holds unexpected extra tensors";
}

}  // namespace

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  constexpr std::size_t fixed = sizeof kCheckpointMagic + 4 + 8;
  if (bytes.size() < fixed) throw CheckpointError("checkpoint truncated: missing preamble");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw CheckpointError("not a checkpoint file (bad magic)");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 8, 4));
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  const std::uint64_t header_len = get_le(bytes, 12, 8);
  if (header_len > bytes.size() - fixed) throw CheckpointError("checkpoint truncated: header");

  Json header;
  try {
    header = Json::parse(bytes.substr(fixed, header_len));
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  Checkpoint ck;
  try {
    if (header.at("format_version").get<std::uint32_t>() != version)
      throw CheckpointError("checkpoint header version disagrees with preamble");
    apply_json(ck.config, header.at("config"));
    ck.config.validate();
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }

  const std::size_t data_start = fixed + header_len;
  const std::uint64_t data_bytes = header.value("data_bytes", std::uint64_t{0});
  if (bytes.size() - data_start != data_bytes)
    throw CheckpointError("checkpoint payload has " + std::to_string(bytes.size() - data_start) +
                          " bytes, header declares " + std::to_string(data_bytes));

  ModelParams params = init_params(ck.config, 0);
  std::string problem;
  try {
    read_tensors(header, bytes, data_start, data_bytes, params, problem);
  } catch (const Json::exception& e) {
    problem = std::string("checkpoint tensor table malformed: ") + e.what();
  }
  if (!problem.empty()) throw CheckpointError(problem);
  ck.params = std::move(params);
  return ck;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace ctg
