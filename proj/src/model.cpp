#include "ctg/model.hpp"

#include <cmath>
#include <limits>

namespace ctg {

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Matrix uniform_fan(Index rows, Index cols, std::uint64_t seed) {
  const auto t = param_init<double>({rows, cols}, InitScheme::uniform_fan, seed);
  return t.matrix();
}

}  // namespace

Index patch_count(Index seq_len, Index patch_len, Index stride) {
  if (patch_len < 1 || stride < 1) throw ModelError("patch length and stride must be >= 1");
  if (patch_len > seq_len)
    throw ModelError("patch length " + std::to_string(patch_len) + " exceeds sequence length " +
                     std::to_string(seq_len));
  return (seq_len - patch_len) / stride + 1;
}

void ModelConfig::validate() const {
  if (seq_len < 1) throw ModelError("seq_len must be >= 1");
  if (patch_len < 1 || patch_len > seq_len) throw ModelError("patch_len must lie in [1, seq_len]");
  if (stride < 1) throw ModelError("stride must be >= 1");
  if (n_layers < 0) throw ModelError("n_layers must be non-negative");
  if (n_heads < 1 || d_model < 1 || d_ff < 1) throw ModelError("widths must be positive");
  if (d_model % n_heads != 0)
    throw ModelError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                     std::to_string(n_heads));
  for (double r : {dropout, fc_dropout, attn_dropout})
    if (!(r >= 0.0 && r < 1.0)) throw ModelError("dropout rates must lie in [0, 1)");
}

bool ModelConfig::same_architecture(const ModelConfig& o) const {
  return seq_len == o.seq_len && patch_len == o.patch_len && stride == o.stride &&
         n_layers == o.n_layers && n_heads == o.n_heads && d_model == o.d_model &&
         d_ff == o.d_ff && activation == o.activation && share_backbone == o.share_backbone;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const Index d = config.d_model, ff = config.d_ff, n = config.num_patches();
  std::uint64_t state = seed;
  auto next = [&] { return splitmix64(state); };
  ModelParams p;
  const std::size_t n_backbones = config.share_backbone ? 1 : ModelConfig::channels;
  for (std::size_t b = 0; b < n_backbones; ++b) {
    BackboneWeights<Matrix> bb;
    bb.w_p = uniform_fan(config.patch_len, d, next());
    bb.w_pos = Matrix::Zero(n, d);
    for (Index l = 0; l < config.n_layers; ++l) {
      LayerWeights<Matrix> layer;
      layer.w_q = uniform_fan(d, d, next());
      layer.w_k = uniform_fan(d, d, next());
      layer.w_v = uniform_fan(d, d, next());
      layer.w_o = uniform_fan(d, d, next());
      layer.w_1 = uniform_fan(d, ff, next());
      layer.b_1 = Matrix::Zero(1, ff);
      layer.w_2 = uniform_fan(ff, d, next());
      layer.b_2 = Matrix::Zero(1, d);
      layer.ln1_gain = Matrix::Ones(1, d);
      layer.ln1_bias = Matrix::Zero(1, d);
      layer.ln2_gain = Matrix::Ones(1, d);
      layer.ln2_bias = Matrix::Zero(1, d);
      bb.layers.push_back(std::move(layer));
    }
    p.backbones.push_back(std::move(bb));
  }
  p.w_c = uniform_fan(2 * d, 1, next());
  p.b_c = Matrix::Zero(1, 1);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  z.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

void check_shapes(const ModelParams& params, const ModelConfig& config) {
  const ModelParams expected = init_params(config, 0);
  const auto want = named_tensors(expected);
  const auto have = named_tensors(params);
  if (want.size() != have.size())
    throw ModelError("parameter set has " + std::to_string(have.size()) + " tensors, config needs " +
                     std::to_string(want.size()));
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i].first != have[i].first)
      throw ModelError("unexpected parameter '" + have[i].first + "', wanted '" + want[i].first + "'");
    if (want[i].second->rows() != have[i].second->rows() ||
        want[i].second->cols() != have[i].second->cols())
      throw ModelError("parameter '" + want[i].first + "' has the wrong shape");
    if (!have[i].second->allFinite())
      throw ModelError("parameter '" + want[i].first + "' holds non-finite values");
  }
}

ParamLeaves make_leaves(const ModelParams& params, bool requires_grad) {
  ParamLeaves leaves;
  leaves.backbones.resize(params.backbones.size());
  for (std::size_t b = 0; b < params.backbones.size(); ++b)
    leaves.backbones[b].layers.resize(params.backbones[b].layers.size());
  std::vector<const Matrix*> src;
  params.for_each([&](const std::string&, const Matrix& m) { src.push_back(&m); });
  std::size_t i = 0;
  leaves.for_each([&](const std::string&, Tensor& t) {
    t = Tensor::from_matrix(*src[i++], requires_grad);
  });
  return leaves;
}

ModelParams collect_grads(const ParamLeaves& leaves) {
  ModelParams grads;
  grads.backbones.resize(leaves.backbones.size());
  for (std::size_t b = 0; b < leaves.backbones.size(); ++b)
    grads.backbones[b].layers.resize(leaves.backbones[b].layers.size());
  std::vector<const Tensor*> src;
  leaves.for_each([&](const std::string&, const Tensor& t) { src.push_back(&t); });
  std::size_t i = 0;
  grads.for_each([&](const std::string&, Matrix& m) {
    const Tensor& t = *src[i++];
    if (t.has_grad())
      m = t.grad_matrix();
    else
      m = Matrix::Zero(t.dim(0), t.dim(1));
  });
  return grads;
}

std::vector<std::pair<std::string, const Matrix*>> named_tensors(const ModelParams& params) {
  std::vector<std::pair<std::string, const Matrix*>> out;
  params.for_each([&](const std::string& name, const Matrix& m) { out.emplace_back(name, &m); });
  return out;
}

std::size_t parameter_count(const ModelParams& params) {
  std::size_t n = 0;
  params.for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

std::uint64_t DropoutContext::next_seed() { return splitmix64(state_); }

DropoutContext DropoutContext::fork(std::uint64_t stream) const {
  std::uint64_t s = state_ ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  return DropoutContext(training_, splitmix64(s));
}

NormalizedChannel instance_normalize(const Eigen::VectorXd& channel, const Mask& mask) {
  if (channel.size() != mask.size()) throw ModelError("channel and mask lengths differ");
  const Index observed = mask.count();
  if (observed < 2) throw ModelError("instance normalisation needs at least 2 observed samples");
  const Eigen::ArrayXd m = mask.cast<double>();
  NormalizedChannel out;
  out.mean = (channel.array() * m).sum() / static_cast<double>(observed);
  const Eigen::ArrayXd centred = (channel.array() - out.mean) * m;
  out.stddev = std::sqrt(centred.square().sum() / static_cast<double>(observed));
  if (out.stddev < kInstanceNormEps)
    out.values = Eigen::VectorXd::Zero(channel.size());
  else
    out.values = (centred / out.stddev).matrix();
  return out;
}

PatchSet make_patches(const Eigen::VectorXd& channel, const Mask& mask, Index patch_len,
                      Index stride) {
  if (channel.size() != mask.size()) throw ModelError("channel and mask lengths differ");
  const Index n = patch_count(channel.size(), patch_len, stride);
  PatchSet ps{Matrix(n, patch_len), Mask(n)};
  for (Index j = 0; j < n; ++j) {
    ps.patches.row(j) = channel.segment(j * stride, patch_len).transpose();
    const Index missing = patch_len - mask.segment(j * stride, patch_len).count();
    ps.patch_mask[j] = 2 * missing <= patch_len;
  }
  return ps;
}

Tensor embed_patches(const PatchSet& patches, const Tensor& w_p, const Tensor& w_pos) {
  if (w_pos.dim(0) != patches.num_patches())
    throw ModelError("positional table has " + std::to_string(w_pos.dim(0)) + " rows for " +
                     std::to_string(patches.num_patches()) + " patches");
  if (w_p.dim(0) != patches.patches.cols()) throw ModelError("patch projection width mismatch");
  return matmul(Tensor::from_matrix(patches.patches), w_p) + w_pos;
}

Tensor attention(const Tensor& embeddings, const LayerWeights<Tensor>& layer, const Mask& patch_mask,
                 Index n_heads, double attn_dropout, DropoutContext& ctx) {
  const Index n = embeddings.dim(0), d = embeddings.dim(1);
  if (n_heads < 1 || d % n_heads != 0) throw ModelError("d_model not divisible by n_heads");
  if (patch_mask.size() != n) throw ModelError("patch mask length mismatch");
  if (!patch_mask.any()) throw ModelError("attention over a sequence with every patch masked");
  const Index dk = d / n_heads;

  Eigen::ArrayXd key_bias(n);
  for (Index j = 0; j < n; ++j)
    key_bias[j] = patch_mask[j] ? 0.0 : -std::numeric_limits<double>::infinity();
  const Tensor bias({n}, key_bias);

  const Tensor q = matmul(embeddings, layer.w_q);
  const Tensor k = matmul(embeddings, layer.w_k);
  const Tensor v = matmul(embeddings, layer.w_v);
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (Index h = 0; h < n_heads; ++h) {
    const Tensor qh = slice_last(q, h * dk, dk);
    const Tensor kh = slice_last(k, h * dk, dk);
    const Tensor vh = slice_last(v, h * dk, dk);
    const Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk) + bias;
    const Tensor weights = dropout(softmax(scores, -1), attn_dropout, ctx.training(), ctx.next_seed());
    heads.push_back(matmul(weights, vh));
  }
  const Tensor merged = n_heads == 1 ? heads[0] : concat_last(heads);
  return matmul(merged, layer.w_o);
}

Tensor ffn(const Tensor& h, const Tensor& w_1, const Tensor& b_1, const Tensor& w_2,
           const Tensor& b_2, Activation act) {
  return matmul(activation(matmul(h, w_1) + b_1, act), w_2) + b_2;
}

Tensor encoder_layer(const Tensor& embeddings, const LayerWeights<Tensor>& layer,
                     const Mask& patch_mask, const ModelConfig& config, DropoutContext& ctx) {
  const bool train = ctx.training();
  const Tensor attn =
      attention(embeddings, layer, patch_mask, config.n_heads, config.attn_dropout, ctx);
  const Tensor mid = layer_norm(embeddings + dropout(attn, config.dropout, train, ctx.next_seed()),
                                layer.ln1_gain, layer.ln1_bias);
  const Tensor ff = ffn(mid, layer.w_1, layer.b_1, layer.w_2, layer.b_2, config.activation);
  return layer_norm(mid + dropout(ff, config.dropout, train, ctx.next_seed()), layer.ln2_gain,
                    layer.ln2_bias);
}

Tensor encode_patches(const PatchSet& patches, const BackboneWeights<Tensor>& backbone,
                      const ModelConfig& config, DropoutContext& ctx) {
  Tensor e = embed_patches(patches, backbone.w_p, backbone.w_pos);
  for (const auto& layer : backbone.layers) e = encoder_layer(e, layer, patches.patch_mask, config, ctx);
  return e;
}

EncodedChannel encode_channel(const Eigen::VectorXd& channel, const Mask& mask,
                              const ModelConfig& config, const BackboneWeights<Tensor>& backbone,
                              DropoutContext& ctx) {
  if (channel.size() != config.seq_len)
    throw ModelError("channel has " + std::to_string(channel.size()) + " samples, model expects " +
                     std::to_string(config.seq_len));
  const auto normalized = instance_normalize(channel, mask);
  auto patches = make_patches(normalized.values, mask, config.patch_len, config.stride);
  Tensor encoded = encode_patches(patches, backbone, config, ctx);
  return {std::move(encoded), std::move(patches.patch_mask)};
}

Tensor pool_channel(const Tensor& encoded, const Mask& patch_mask) {
  const Index n = encoded.dim(0);
  if (patch_mask.size() != n) throw ModelError("patch mask length mismatch");
  const Index kept = patch_mask.count();
  if (kept == 0) throw ModelError("cannot pool a channel with every patch masked");
  Eigen::ArrayXd w = patch_mask.cast<double>() / static_cast<double>(kept);
  return matmul(Tensor({1, n}, std::move(w)), encoded);
}

Tensor classify(const Tensor& g_fhr, const Tensor& g_toco, const Tensor& w_c, const Tensor& b_c,
                double fc_dropout, DropoutContext& ctx) {
  const Tensor features =
      dropout(concat_last<double>({g_fhr, g_toco}), fc_dropout, ctx.training(), ctx.next_seed());
  return sigmoid(matmul(features, w_c) + b_c);
}

Tensor forward(const Trace& trace, const ModelConfig& config, const ParamLeaves& leaves,
               bool training, std::uint64_t seed) {
  DropoutContext root(training, seed);
  DropoutContext fhr_ctx = root.fork(0);
  DropoutContext toco_ctx = root.fork(1);
  DropoutContext head_ctx = root.fork(2);
  const auto fhr = encode_channel(trace.fhr, trace.fhr_mask, config, leaves.backbone(0), fhr_ctx);
  const auto toco = encode_channel(trace.toco, trace.toco_mask, config, leaves.backbone(1), toco_ctx);
  return classify(pool_channel(fhr.encoded, fhr.patch_mask), pool_channel(toco.encoded, toco.patch_mask),
                  leaves.w_c, leaves.b_c, config.fc_dropout, head_ctx);
}

std::vector<double> predict(const std::vector<Trace>& traces, const ModelConfig& config,
                            const ModelParams& params) {
  const ParamLeaves leaves = make_leaves(params, false);
  std::vector<double> out;
  out.reserve(traces.size());
  for (const auto& t : traces) out.push_back(forward(t, config, leaves, false).item());
  return out;
}

double predict(const Trace& trace, const ModelConfig& config, const ModelParams& params) {
  return forward(trace, config, make_leaves(params, false), false).item();
}

}  // namespace ctg
