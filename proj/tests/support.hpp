#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include "ctg/model.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace ctg::testing {

inline ModelConfig tiny_config() {
  ModelConfig c;
  c.seq_len = 32;
  c.patch_len = 8;
  c.stride = 8;
  c.d_model = 8;
  c.d_ff = 16;
  c.n_layers = 1;
  c.n_heads = 2;
  c.dropout = c.fc_dropout = c.attn_dropout = 0.0;
  return c;
}

/// Unit-range two-channel trace with roughly `missing_rate` of each channel
/// masked, in short runs.
inline Trace random_trace(Index length, std::uint64_t seed, double missing_rate = 0.1, int label = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Trace t;
  t.trace_id = "rand" + std::to_string(seed);
  t.label = label;
  t.fhr = Eigen::VectorXd(length);
  t.toco = Eigen::VectorXd(length);
  t.fhr_mask = Mask::Constant(length, true);
  t.toco_mask = Mask::Constant(length, true);
  const double phase = u(rng) * 6.28;
  for (Index i = 0; i < length; ++i) {
    t.fhr[i] = std::clamp(0.5 + 0.2 * std::sin(0.3 * static_cast<double>(i) + phase) + 0.1 * (u(rng) - 0.5), 0.0, 1.0);
    t.toco[i] = u(rng);
  }
  for (auto* ch : {&t.fhr_mask, &t.toco_mask}) {
    Index i = 0;
    while (i < length) {
      if (u(rng) < missing_rate / 3) {
        const Index run = 1 + static_cast<Index>(u(rng) * 5);
        for (Index k = i; k < std::min(length, i + run); ++k) (*ch)[k] = false;
        i += run;
      } else {
        ++i;
      }
    }
  }
  for (Index i = 0; i < length; ++i) {
    if (!t.fhr_mask[i]) t.fhr[i] = 0;
    if (!t.toco_mask[i]) t.toco[i] = 0;
  }
  return t;
}

/// Every tensor (biases and positional table included) drawn from U(-a, a);
/// layer-norm gains stay near one.
inline ModelParams random_params(const ModelConfig& config, std::uint64_t seed, double a = 0.5) {
  ModelParams p = init_params(config, seed);
  std::mt19937_64 rng(seed ^ 0x1234567ULL);
  std::uniform_real_distribution<double> u(-a, a);
  p.for_each([&](const std::string& name, Matrix& m) {
    const bool gain = name.find("gain") != std::string::npos;
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = gain ? 1.0 + 0.5 * u(rng) : u(rng);
  });
  return p;
}

inline std::vector<Tensor> leaf_list(ParamLeaves& leaves) {
  std::vector<Tensor> out;
  leaves.for_each([&](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

/// Plain dense multi-head attention over the unmasked keys, written directly
/// from the definition.
inline Matrix attention_oracle(const Matrix& e, const Matrix& wq, const Matrix& wk, const Matrix& wv,
                               const Matrix& wo, const Mask& key_mask, Index n_heads) {
  const Index n = e.rows(), d = e.cols(), dk = d / n_heads;
  const Matrix q = e * wq, k = e * wk, v = e * wv;
  Matrix merged(n, d);
  for (Index h = 0; h < n_heads; ++h) {
    for (Index i = 0; i < n; ++i) {
      std::vector<double> logits;
      double mx = -1e300;
      for (Index j = 0; j < n; ++j) {
        const double s = key_mask[j] ? q.row(i).segment(h * dk, dk).dot(k.row(j).segment(h * dk, dk)) /
                                           std::sqrt(static_cast<double>(dk))
                                     : -1e300;
        logits.push_back(s);
        mx = std::max(mx, s);
      }
      double z = 0;
      for (Index j = 0; j < n; ++j)
        if (key_mask[j]) z += std::exp(logits[static_cast<std::size_t>(j)] - mx);
      Eigen::RowVectorXd out = Eigen::RowVectorXd::Zero(dk);
      for (Index j = 0; j < n; ++j)
        if (key_mask[j])
          out += std::exp(logits[static_cast<std::size_t>(j)] - mx) / z * v.row(j).segment(h * dk, dk);
      merged.row(i).segment(h * dk, dk) = out;
    }
  }
  return merged * wo;
}

/// Removes the given rows.
inline Matrix drop_rows(const Matrix& m, const Mask& keep) {
  Matrix out(keep.count(), m.cols());
  for (Index i = 0, r = 0; i < m.rows(); ++i)
    if (keep[i]) out.row(r++) = m.row(i);
  return out;
}

/// Probability computed by physically deleting the masked patches of both
/// channels (with their positional rows) instead of masking them.
inline double forward_by_deletion(const Trace& trace, const ModelConfig& config,
                                  const ModelParams& params) {
  const ParamLeaves leaves = make_leaves(params, false);
  DropoutContext ctx(false, 0);
  std::vector<Tensor> pooled;
  for (Index ch = 0; ch < 2; ++ch) {
    const auto& x = ch == 0 ? trace.fhr : trace.toco;
    const auto& m = ch == 0 ? trace.fhr_mask : trace.toco_mask;
    const auto norm = instance_normalize(x, m);
    const PatchSet full = make_patches(norm.values, m, config.patch_len, config.stride);
    PatchSet kept{drop_rows(full.patches, full.patch_mask), Mask::Constant(full.patch_mask.count(), true)};
    BackboneWeights<Tensor> bb = leaves.backbone(ch);
    bb.w_pos = Tensor::from_matrix(drop_rows(bb.w_pos.matrix(), full.patch_mask));
    Tensor e = encode_patches(kept, bb, config, ctx);
    pooled.push_back(pool_channel(e, kept.patch_mask));
  }
  return classify(pooled[0], pooled[1], leaves.w_c, leaves.b_c, 0.0, ctx).item();
}

/// Swaps whole patches (P == S) of both channels according to `perm`.
inline Trace permute_patches(const Trace& t, Index patch_len, const std::vector<Index>& perm) {
  Trace out = t;
  for (std::size_t j = 0; j < perm.size(); ++j) {
    const Index dst = static_cast<Index>(j) * patch_len, src = perm[j] * patch_len;
    out.fhr.segment(dst, patch_len) = t.fhr.segment(src, patch_len);
    out.toco.segment(dst, patch_len) = t.toco.segment(src, patch_len);
    out.fhr_mask.segment(dst, patch_len) = t.fhr_mask.segment(src, patch_len);
    out.toco_mask.segment(dst, patch_len) = t.toco_mask.segment(src, patch_len);
  }
  return out;
}

/// Brute-force count of start positions s with s + P <= L, s = 0, S, 2S, ...
inline Index enumerate_patches(Index seq_len, Index patch_len, Index stride) {
  Index n = 0;
  for (Index s = 0; s + patch_len <= seq_len; s += stride) ++n;
  return n;
}

/// Two-class set told apart by the period of the FHR oscillation (fast for
/// label 1, slow for label 0); TOCO is noise shared by both classes.
inline std::vector<Trace> separable_set(std::size_t n, Index length, std::uint64_t seed,
                                        const std::string& prefix = "sep") {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Trace> out;
  for (std::size_t k = 0; k < n; ++k) {
    Trace t;
    t.label = static_cast<int>(k % 2);
    t.trace_id = prefix + std::to_string(k);
    t.days_to_delivery = static_cast<double>(k % 8);
    t.fhr = Eigen::VectorXd(length);
    t.toco = Eigen::VectorXd(length);
    t.fhr_mask = Mask::Constant(length, true);
    t.toco_mask = Mask::Constant(length, true);
    const double period = t.label ? 4.0 : 16.0;
    const double phase = u(rng) * 6.28;
    for (Index i = 0; i < length; ++i) {
      t.fhr[i] = 0.5 + 0.3 * std::sin(6.2831853 * static_cast<double>(i) / period + phase) +
                 0.05 * (u(rng) - 0.5);
      t.toco[i] = u(rng);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace ctg::testing
