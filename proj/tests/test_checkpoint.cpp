#include "ctg/checkpoint.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace ctg;
using ctg::testing::random_params;
using ctg::testing::random_trace;
using ctg::testing::tiny_config;

namespace {

bool bit_equal(const ModelParams& a, const ModelParams& b) {
  const auto ta = named_tensors(a), tb = named_tensors(b);
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    const Matrix& x = *ta[i].second;
    const Matrix& y = *tb[i].second;
    if (ta[i].first != tb[i].first || x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0)
      return false;
  }
  return true;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("ctg_ckpt_" + name)).string();
}

ModelConfig small_config() {
  ModelConfig c = tiny_config();
  c.n_layers = 2;
  c.activation = Activation::relu;
  c.dropout = 0.1;
  return c;
}

}  // namespace

TEST(Checkpoint, FileRoundTripIsBitExact) {
  const auto config = small_config();
  const ModelParams p = random_params(config, 17, 1.0);
  const auto path = temp_path("round.bin");
  save_checkpoint(p, config, path);
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.config, config);
  EXPECT_TRUE(bit_equal(ck.params, p));
  std::filesystem::remove(path);
}

TEST(Checkpoint, SpecialValuesSurvive) {
  const auto config = tiny_config();
  ModelParams p = init_params(config, 1);
  p.w_c(0, 0) = -0.0;
  p.w_c(1, 0) = 5e-324;
  p.w_c(2, 0) = 1.0 / 3.0;
  const Checkpoint ck = deserialize_checkpoint(serialize_checkpoint(p, config));
  EXPECT_TRUE(std::signbit(ck.params.w_c(0, 0)));
  EXPECT_EQ(ck.params.w_c(1, 0), 5e-324);
  EXPECT_TRUE(bit_equal(ck.params, p));
}

TEST(Checkpoint, ForwardAfterReloadIsBitIdentical) {
  const auto config = small_config();
  const ModelParams p = random_params(config, 23, 0.4);
  const Checkpoint ck = deserialize_checkpoint(serialize_checkpoint(p, config));
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Trace t = random_trace(config.seq_len, s, 0.2);
    const double a = predict(t, config, p);
    const double b = predict(t, ck.config, ck.params);
    EXPECT_EQ(std::memcmp(&a, &b, sizeof a), 0);
  }
}

TEST(Checkpoint, EveryTruncationIsRejected) {
  const auto config = tiny_config();
  const std::string bytes = serialize_checkpoint(init_params(config, 3), config);
  for (std::size_t n = 0; n < bytes.size(); n += (n < 64 ? 1 : 37))
    EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, n)), CheckpointError) << n;
  EXPECT_THROW(deserialize_checkpoint(bytes.substr(0, bytes.size() - 1)), CheckpointError);
}

TEST(Checkpoint, TrailingBytesRejected) {
  const auto config = tiny_config();
  const std::string bytes = serialize_checkpoint(init_params(config, 3), config);
  EXPECT_THROW(deserialize_checkpoint(bytes + std::string(8, '\0')), CheckpointError);
}

TEST(Checkpoint, BadMagicRejected) {
  const auto config = tiny_config();
  std::string bytes = serialize_checkpoint(init_params(config, 3), config);
  bytes[0] = 'X';
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Checkpoint, VersionMismatchRejected) {
  const auto config = tiny_config();
  std::string bytes = serialize_checkpoint(init_params(config, 3), config);
  bytes[8] = static_cast<char>(kCheckpointVersion + 1);
  try {
    deserialize_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, HeaderShapeTamperingRejected) {
  const auto config = tiny_config();
  std::string bytes = serialize_checkpoint(init_params(config, 3), config);
  const auto pos = bytes.find("\"d_model\":8");
  ASSERT_NE(pos, std::string::npos);
  bytes.replace(pos, 11, "\"d_model\":4");
  EXPECT_THROW(deserialize_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, MissingFileRejected) {
  EXPECT_THROW(load_checkpoint(temp_path("does_not_exist.bin")), CheckpointError);
}

TEST(Checkpoint, UnwritablePathRejected) {
  const auto config = tiny_config();
  EXPECT_THROW(save_checkpoint(init_params(config, 1), config, "/nonexistent-dir/x/ck.bin"),
               CheckpointError);
}

TEST(Checkpoint, PreambleLayout) {
  const auto config = tiny_config();
  const std::string bytes = serialize_checkpoint(init_params(config, 3), config);
  ASSERT_GE(bytes.size(), 20u);
  EXPECT_EQ(bytes.substr(0, 8), "PCTGCKPT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), kCheckpointVersion);
  std::uint64_t header_len = 0;
  for (int i = 0; i < 8; ++i)
    header_len |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[12 + i])) << (8 * i);
  EXPECT_EQ(bytes[20], '{');
  EXPECT_EQ(bytes[20 + header_len - 1], '}');
  EXPECT_EQ(bytes.size() - 20 - header_len, parameter_count(init_params(config, 3)) * 8);
}
