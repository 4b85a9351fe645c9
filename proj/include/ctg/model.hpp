#pragma once

#include "ctg/numcore.hpp"
#include "ctg/signal.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace ctg {

using Matrix = RowMatrix<double>;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Number of length-`patch_len` windows taken every `stride` samples from a
/// sequence of `seq_len`: floor((L - P) / S) + 1.
Index patch_count(Index seq_len, Index patch_len, Index stride);

struct ModelConfig {
  Index seq_len = signal::kWindowLength;
  Index patch_len = 16;
  Index stride = 16;
  Index n_layers = 3;
  Index n_heads = 4;
  Index d_model = 64;
  Index d_ff = 128;
  double dropout = 0.1;       // attention and FFN sublayer outputs
  double fc_dropout = 0.1;    // before the classification head
  double attn_dropout = 0.1;  // on softmaxed attention weights
  Activation activation = Activation::gelu;
  bool share_backbone = true;
  // Accepted for configuration fidelity; no component uses it.
  Index kernel_size = 15;

  static constexpr Index channels = 2;

  Index num_patches() const { return patch_count(seq_len, patch_len, stride); }
  Index head_dim() const { return d_model / n_heads; }
  void validate() const;
  /// True when both configs induce the same parameter shapes and forward
  /// structure (dropout rates may differ).
  bool same_architecture(const ModelConfig& other) const;
  bool operator==(const ModelConfig&) const = default;
};

// Weight containers, generic over the element type so the same layout holds
// plain matrices (ModelParams) and graph leaves (ParamLeaves).

template <typename T>
struct LayerWeights {
  T w_q, w_k, w_v, w_o;  // d x d
  T w_1, b_1;            // d x d_ff, 1 x d_ff
  T w_2, b_2;            // d_ff x d, 1 x d
  T ln1_gain, ln1_bias, ln2_gain, ln2_bias;  // 1 x d

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "w_q", self.w_q);
    f(prefix + "w_k", self.w_k);
    f(prefix + "w_v", self.w_v);
    f(prefix + "w_o", self.w_o);
    f(prefix + "w_1", self.w_1);
    f(prefix + "b_1", self.b_1);
    f(prefix + "w_2", self.w_2);
    f(prefix + "b_2", self.b_2);
    f(prefix + "ln1_gain", self.ln1_gain);
    f(prefix + "ln1_bias", self.ln1_bias);
    f(prefix + "ln2_gain", self.ln2_gain);
    f(prefix + "ln2_bias", self.ln2_bias);
  }
};

template <typename T>
struct BackboneWeights {
  T w_p;    // P x d patch projection
  T w_pos;  // N x d learned positional table
  std::vector<LayerWeights<T>> layers;

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + "w_p", self.w_p);
    f(prefix + "w_pos", self.w_pos);
    for (std::size_t i = 0; i < self.layers.size(); ++i)
      LayerWeights<T>::visit(self.layers[i], prefix + "layer" + std::to_string(i) + ".", f);
  }
};

template <typename T>
struct Weights {
  std::vector<BackboneWeights<T>> backbones;  // one when shared, else one per channel
  T w_c;  // 2d x 1
  T b_c;  // 1 x 1

  /// Calls f(name, element) for every tensor in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit_all(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit_all(*this, f);
  }

  const BackboneWeights<T>& backbone(Index channel) const {
    return backbones.size() == 1 ? backbones[0] : backbones[static_cast<std::size_t>(channel)];
  }

 private:
  template <typename Self, typename F>
  static void visit_all(Self& self, F& f) {
    for (std::size_t i = 0; i < self.backbones.size(); ++i)
      BackboneWeights<T>::visit(self.backbones[i], "backbone" + std::to_string(i) + ".", f);
    f(std::string("head.w_c"), self.w_c);
    f(std::string("head.b_c"), self.b_c);
  }
};

using ModelParams = Weights<Matrix>;
using ParamLeaves = Weights<Tensor>;

/// Fan-in uniform weights; zero biases and positional table; unit LN gains.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);
ModelParams zeros_like(const ModelParams& params);
/// Throws ModelError if any tensor shape disagrees with `config`.
void check_shapes(const ModelParams& params, const ModelConfig& config);
ParamLeaves make_leaves(const ModelParams& params, bool requires_grad);
/// Gradients held by the leaves (zeros where none reached).
ModelParams collect_grads(const ParamLeaves& leaves);
std::vector<std::pair<std::string, const Matrix*>> named_tensors(const ModelParams& params);
std::size_t parameter_count(const ModelParams& params);

// ---------------------------------------------------------------------------
// Forward building blocks.

/// Supplies per-site dropout seeds for one forward pass.
class DropoutContext {
 public:
  DropoutContext(bool training, std::uint64_t seed) : training_(training), state_(seed) {}
  bool training() const { return training_; }
  std::uint64_t next_seed();
  DropoutContext fork(std::uint64_t stream) const;

 private:
  bool training_;
  std::uint64_t state_;
};

struct NormalizedChannel {
  Eigen::VectorXd values;
  double mean = 0;
  double stddev = 0;
};

inline constexpr double kInstanceNormEps = 1e-8;

/// Standardises the observed samples to zero mean and unit (population)
/// variance; masked samples stay 0. A spread below 1e-8 yields all zeros.
NormalizedChannel instance_normalize(const Eigen::VectorXd& channel, const Mask& mask);

struct PatchSet {
  Matrix patches;  // N x P
  Mask patch_mask;  // true = attended
  Index num_patches() const { return patches.rows(); }
};

/// Patch j covers [j*S, j*S+P). A patch is masked when more than half of its
/// samples are unobserved.
PatchSet make_patches(const Eigen::VectorXd& channel, const Mask& mask, Index patch_len,
                      Index stride);

/// e_j = p_j W_P + W_pos[j], for all patches including masked ones.
Tensor embed_patches(const PatchSet& patches, const Tensor& w_p, const Tensor& w_pos);

/// Multi-head self-attention; masked patches are excluded as keys.
Tensor attention(const Tensor& embeddings, const LayerWeights<Tensor>& layer, const Mask& patch_mask,
                 Index n_heads, double attn_dropout, DropoutContext& ctx);

/// act(H W_1 + b_1) W_2 + b_2, row-wise.
Tensor ffn(const Tensor& h, const Tensor& w_1, const Tensor& b_1, const Tensor& w_2,
           const Tensor& b_2, Activation act);

/// Post-norm block: E' = LN(E + drop(MHSA(E))); out = LN(E' + drop(FFN(E'))).
Tensor encoder_layer(const Tensor& embeddings, const LayerWeights<Tensor>& layer,
                     const Mask& patch_mask, const ModelConfig& config, DropoutContext& ctx);

/// Embedding followed by the encoder stack.
Tensor encode_patches(const PatchSet& patches, const BackboneWeights<Tensor>& backbone,
                      const ModelConfig& config, DropoutContext& ctx);

struct EncodedChannel {
  Tensor encoded;  // N x d
  Mask patch_mask;
};

/// instance_normalize -> make_patches -> encode_patches for one channel.
EncodedChannel encode_channel(const Eigen::VectorXd& channel, const Mask& mask,
                              const ModelConfig& config, const BackboneWeights<Tensor>& backbone,
                              DropoutContext& ctx);

/// Mean of the unmasked rows, as a 1 x d tensor.
Tensor pool_channel(const Tensor& encoded, const Mask& patch_mask);

/// sigmoid([g_fhr, g_toco] W_c + b_c) as a 1 x 1 tensor.
Tensor classify(const Tensor& g_fhr, const Tensor& g_toco, const Tensor& w_c, const Tensor& b_c,
                double fc_dropout, DropoutContext& ctx);

/// Full model on one trace; returns the adverse-outcome probability (1 x 1).
Tensor forward(const Trace& trace, const ModelConfig& config, const ParamLeaves& leaves,
               bool training, std::uint64_t seed = 0);

/// Inference probabilities for a batch of traces (dropout off).
std::vector<double> predict(const std::vector<Trace>& traces, const ModelConfig& config,
                            const ModelParams& params);
double predict(const Trace& trace, const ModelConfig& config, const ModelParams& params);

inline int class_label(double probability, double threshold = 0.5) {
  return probability >= threshold ? 1 : 0;
}

}  // namespace ctg
