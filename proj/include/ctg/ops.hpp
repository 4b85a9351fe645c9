#pragma once

#include "ctg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <string_view>

namespace ctg {

enum class Activation { relu, gelu, elu };

inline std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
    case Activation::elu: return "elu";
  }
  throw TensorError("unknown activation kind");
}

inline Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  if (name == "elu") return Activation::elu;
  throw TensorError("unknown activation kind '" + std::string(name) + "'");
}

enum class InitScheme { uniform_fan, zeros };

namespace detail {

/// Elementwise binary layout: either equal shapes or one operand's shape,
/// without leading unit axes, is a trailing suffix of the other's
/// (bias-style broadcast).
struct SuffixBroadcast {
  Shape out;
  Index outer_a = 1;  // repeats of a
  Index outer_b = 1;  // repeats of b
};

// Leading unit axes of `small` are ignored.
inline bool is_suffix(const Shape& small, const Shape& big) {
  auto first = small.begin();
  while (first != small.end() && *first == 1) ++first;
  const auto n = static_cast<std::size_t>(small.end() - first);
  if (n > big.size()) return false;
  return std::equal(first, small.end(), big.end() - static_cast<std::ptrdiff_t>(n));
}

inline SuffixBroadcast suffix_broadcast(const Shape& a, const Shape& b) {
  SuffixBroadcast bc;
  if (is_suffix(b, a) && a.size() >= b.size()) {
    bc.out = a;
    bc.outer_b = shape_size(a) / shape_size(b);
  } else if (is_suffix(a, b)) {
    bc.out = b;
    bc.outer_a = shape_size(b) / shape_size(a);
  } else {
    throw TensorError("shapes " + shape_string(a) + " and " + shape_string(b) +
                      " are not broadcast-compatible");
  }
  return bc;
}

// Sums a flat gradient of `outer` stacked copies back onto one copy.
template <typename Scalar>
void accumulate_folded(typename Node<Scalar>::Array& dst,
                       const typename Node<Scalar>::Array& src, Index outer) {
  const Index n = dst.size();
  for (Index r = 0; r < outer; ++r) dst += src.segment(r * n, n);
}

template <typename Scalar>
BasicTensor<Scalar> binary(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b, char op) {
  using Array = typename Node<Scalar>::Array;
  const auto bc = suffix_broadcast(a.shape(), b.shape());
  const Array av = a.values().replicate(bc.outer_a, 1);
  const Array bv = b.values().replicate(bc.outer_b, 1);
  Array out;
  switch (op) {
    case '+': out = av + bv; break;
    case '-': out = av - bv; break;
    default: out = av * bv; break;
  }
  return make_result<Scalar>(
      bc.out, std::move(out), {a, b}, [bc, op](Node<Scalar>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const Array& g = self.grad;
        if (pa.requires_grad) {
          Array ga = g;
          if (op == '*') ga *= pb.values.replicate(bc.outer_b, 1);
          accumulate_folded<Scalar>(pa.ensure_grad(), ga, bc.outer_a);
        }
        if (pb.requires_grad) {
          Array gb = g;
          if (op == '-') gb = -gb;
          if (op == '*') gb *= pa.values.replicate(bc.outer_a, 1);
          accumulate_folded<Scalar>(pb.ensure_grad(), gb, bc.outer_b);
        }
      });
}

}  // namespace detail

template <typename Scalar>
BasicTensor<Scalar> add(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return detail::binary(a, b, '+');
}
template <typename Scalar>
BasicTensor<Scalar> sub(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return detail::binary(a, b, '-');
}
/// Elementwise (Hadamard) product.
template <typename Scalar>
BasicTensor<Scalar> mul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return detail::binary(a, b, '*');
}

template <typename Scalar>
BasicTensor<Scalar> operator+(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
BasicTensor<Scalar> operator-(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
BasicTensor<Scalar> operator*(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  return mul(a, b);
}

template <typename Scalar>
BasicTensor<Scalar> scale(const BasicTensor<Scalar>& a, Scalar factor) {
  return detail::make_result<Scalar>(a.shape(), a.values() * factor, {a},
                                     [factor](detail::Node<Scalar>& self) {
                                       self.parents[0]->ensure_grad() += self.grad * factor;
                                     });
}

template <typename Scalar>
BasicTensor<Scalar> reshape(const BasicTensor<Scalar>& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw TensorError("cannot reshape " + shape_string(a.shape()) + " to " + shape_string(shape));
  return detail::make_result<Scalar>(std::move(shape), a.values(), {a},
                                     [](detail::Node<Scalar>& self) {
                                       self.parents[0]->ensure_grad() += self.grad;
                                     });
}

/// Batched matrix product over the last two axes; leading axes broadcast.
template <typename Scalar>
BasicTensor<Scalar> matmul(const BasicTensor<Scalar>& a, const BasicTensor<Scalar>& b) {
  using Mat = RowMatrix<Scalar>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  if (a.rank() < 2 || b.rank() < 2) throw TensorError("matmul needs rank >= 2 operands");
  const Index m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2)
    throw TensorError("matmul dimension mismatch: " + shape_string(a.shape()) + " x " +
                      shape_string(b.shape()));

  const Shape abatch(a.shape().begin(), a.shape().end() - 2);
  const Shape bbatch(b.shape().begin(), b.shape().end() - 2);
  const std::size_t nb = std::max(abatch.size(), bbatch.size());
  Shape obatch(nb, 1);
  std::vector<Index> astride(nb, 0), bstride(nb, 0);
  {
    Index sa = 1, sb = 1;
    for (std::size_t i = 0; i < nb; ++i) {
      const std::size_t r = nb - 1 - i;
      const Index ea = i < abatch.size() ? abatch[abatch.size() - 1 - i] : 1;
      const Index eb = i < bbatch.size() ? bbatch[bbatch.size() - 1 - i] : 1;
      if (ea != eb && ea != 1 && eb != 1)
        throw TensorError("matmul batch dimensions not broadcastable: " +
                          shape_string(a.shape()) + " x " + shape_string(b.shape()));
      obatch[r] = std::max(ea, eb);
      astride[r] = ea == 1 ? 0 : sa;
      bstride[r] = eb == 1 ? 0 : sb;
      sa *= ea;
      sb *= eb;
    }
  }
  const Index count = shape_size(obatch);
  std::vector<std::pair<Index, Index>> pairs(static_cast<std::size_t>(count));
  for (Index o = 0; o < count; ++o) {
    Index rem = o, ia = 0, ib = 0;
    for (std::size_t r = nb; r-- > 0;) {
      const Index idx = rem % obatch[r];
      rem /= obatch[r];
      ia += idx * astride[r];
      ib += idx * bstride[r];
    }
    pairs[static_cast<std::size_t>(o)] = {ia, ib};
  }

  Shape oshape = obatch;
  oshape.push_back(m);
  oshape.push_back(n);
  typename detail::Node<Scalar>::Array out(count * m * n);
  for (Index o = 0; o < count; ++o) {
    const auto [ia, ib] = pairs[static_cast<std::size_t>(o)];
    MMap(out.data() + o * m * n, m, n).noalias() =
        CMap(a.values().data() + ia * m * k, m, k) * CMap(b.values().data() + ib * k * n, k, n);
  }
  return detail::make_result<Scalar>(
      std::move(oshape), std::move(out), {a, b},
      [pairs = std::move(pairs), m, k, n](detail::Node<Scalar>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        for (std::size_t o = 0; o < pairs.size(); ++o) {
          const auto [ia, ib] = pairs[o];
          CMap g(self.grad.data() + static_cast<Index>(o) * m * n, m, n);
          if (pa.requires_grad)
            MMap(pa.ensure_grad().data() + ia * m * k, m, k).noalias() +=
                g * CMap(pb.values.data() + ib * k * n, k, n).transpose();
          if (pb.requires_grad)
            MMap(pb.ensure_grad().data() + ib * k * n, k, n).noalias() +=
                CMap(pa.values.data() + ia * m * k, m, k).transpose() * g;
        }
      });
}

/// Swaps the last two axes.
template <typename Scalar>
BasicTensor<Scalar> transpose(const BasicTensor<Scalar>& a) {
  using Mat = RowMatrix<Scalar>;
  if (a.rank() < 2) throw TensorError("transpose needs rank >= 2");
  const Index r = a.dim(-2), c = a.dim(-1), batch = a.size() / (r * c);
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  typename detail::Node<Scalar>::Array out(a.size());
  for (Index i = 0; i < batch; ++i)
    Eigen::Map<Mat>(out.data() + i * r * c, c, r) =
        Eigen::Map<const Mat>(a.values().data() + i * r * c, r, c).transpose();
  return detail::make_result<Scalar>(
      std::move(shape), std::move(out), {a}, [r, c, batch](detail::Node<Scalar>& self) {
        auto& g = self.parents[0]->ensure_grad();
        for (Index i = 0; i < batch; ++i)
          Eigen::Map<Mat>(g.data() + i * r * c, r, c) +=
              Eigen::Map<const Mat>(self.grad.data() + i * r * c, c, r).transpose();
      });
}

template <typename Scalar>
BasicTensor<Scalar> sum(const BasicTensor<Scalar>& a) {
  typename detail::Node<Scalar>::Array out(1);
  out[0] = a.values().sum();
  return detail::make_result<Scalar>({1}, std::move(out), {a}, [](detail::Node<Scalar>& self) {
    self.parents[0]->ensure_grad() += self.grad[0];
  });
}

template <typename Scalar>
BasicTensor<Scalar> mean(const BasicTensor<Scalar>& a) {
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

/// Numerically stable softmax along `axis` (negative counts from the end).
/// Entries equal to -inf receive zero weight.
template <typename Scalar>
BasicTensor<Scalar> softmax(const BasicTensor<Scalar>& x, Index axis = -1) {
  const Index r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw TensorError("softmax axis out of range");
  const auto& shape = x.shape();
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= shape[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < r; ++i) inner *= shape[static_cast<std::size_t>(i)];
  const Index len = shape[static_cast<std::size_t>(axis)];

  const auto& xv = x.values();
  typename detail::Node<Scalar>::Array y(x.size());
  for (Index o = 0; o < outer; ++o) {
    for (Index in = 0; in < inner; ++in) {
      const Index base = o * len * inner + in;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Index j = 0; j < len; ++j) mx = std::max(mx, xv[base + j * inner]);
      if (!std::isfinite(mx)) throw TensorError("softmax over a slice with no finite entry");
      Scalar total = 0;
      for (Index j = 0; j < len; ++j) {
        const Scalar e = std::exp(xv[base + j * inner] - mx);
        y[base + j * inner] = e;
        total += e;
      }
      for (Index j = 0; j < len; ++j) y[base + j * inner] /= total;
    }
  }
  return detail::make_result<Scalar>(
      shape, std::move(y), {x}, [outer, inner, len](detail::Node<Scalar>& self) {
        auto& gx = self.parents[0]->ensure_grad();
        const auto& yv = self.values;
        const auto& g = self.grad;
        for (Index o = 0; o < outer; ++o) {
          for (Index in = 0; in < inner; ++in) {
            const Index base = o * len * inner + in;
            Scalar dot = 0;
            for (Index j = 0; j < len; ++j) dot += g[base + j * inner] * yv[base + j * inner];
            for (Index j = 0; j < len; ++j) {
              const Index p = base + j * inner;
              gx[p] += yv[p] * (g[p] - dot);
            }
          }
        }
      });
}

/// Normalises the last axis to zero mean and unit variance, then applies
/// the affine `gain`/`bias` (both shaped like the last axis).
template <typename Scalar>
BasicTensor<Scalar> layer_norm(const BasicTensor<Scalar>& x, const BasicTensor<Scalar>& gain,
                               const BasicTensor<Scalar>& bias, Scalar eps = Scalar(1e-5)) {
  using Mat = RowMatrix<Scalar>;
  using Vec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  const Index n = x.dim(-1);
  if (gain.size() != n || bias.size() != n)
    throw TensorError("layer_norm gain/bias must match the last axis (" + std::to_string(n) + ")");
  const Index rows = x.size() / n;
  Eigen::Map<const Mat> X(x.values().data(), rows, n);
  Eigen::Map<const Vec> G(gain.values().data(), n);
  Eigen::Map<const Vec> B(bias.values().data(), n);

  Mat xhat(rows, n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(rows);
  for (Index i = 0; i < rows; ++i) {
    const Scalar mu = X.row(i).mean();
    const Scalar var = (X.row(i).array() - mu).square().mean();
    inv_std[i] = Scalar(1) / std::sqrt(var + eps);
    xhat.row(i) = (X.row(i).array() - mu) * inv_std[i];
  }
  Mat y = (xhat.array().rowwise() * G.array()).rowwise() + B.array();
  typename detail::Node<Scalar>::Array out = Eigen::Map<const typename detail::Node<Scalar>::Array>(
      y.data(), y.size());
  return detail::make_result<Scalar>(
      x.shape(), std::move(out), {x, gain, bias},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, n](detail::Node<Scalar>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        Eigen::Map<const Mat> g(self.grad.data(), rows, n);
        if (pg.requires_grad)
          Eigen::Map<Vec>(pg.ensure_grad().data(), n) += (g.array() * xhat.array()).colwise().sum().matrix();
        if (pb.requires_grad) Eigen::Map<Vec>(pb.ensure_grad().data(), n) += g.colwise().sum();
        if (px.requires_grad) {
          Eigen::Map<const Vec> G(pg.values.data(), n);
          Eigen::Map<Mat> gx(px.ensure_grad().data(), rows, n);
          for (Index i = 0; i < rows; ++i) {
            const auto gh = (g.row(i).array() * G.array()).eval();
            const Scalar m1 = gh.mean();
            const Scalar m2 = (gh * xhat.row(i).array()).mean();
            gx.row(i).array() += inv_std[i] * (gh - m1 - xhat.row(i).array() * m2);
          }
        }
      });
}

template <typename Scalar>
BasicTensor<Scalar> activation(const BasicTensor<Scalar>& x, Activation kind) {
  using Array = typename detail::Node<Scalar>::Array;
  const Array& v = x.values();
  Array y(v.size()), dy(v.size());
  const Scalar inv_sqrt2 = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  const Scalar inv_sqrt2pi = std::numbers::inv_sqrtpi_v<Scalar> * inv_sqrt2;
  for (Index i = 0; i < v.size(); ++i) {
    const Scalar t = v[i];
    switch (kind) {
      case Activation::relu:
        y[i] = t > 0 ? t : Scalar(0);
        dy[i] = t > 0 ? Scalar(1) : Scalar(0);
        break;
      case Activation::gelu: {
        const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(t * inv_sqrt2));
        y[i] = t * cdf;
        dy[i] = cdf + t * inv_sqrt2pi * std::exp(Scalar(-0.5) * t * t);
        break;
      }
      case Activation::elu:
        y[i] = t > 0 ? t : std::expm1(t);
        dy[i] = t > 0 ? Scalar(1) : std::exp(t);
        break;
    }
  }
  return detail::make_result<Scalar>(x.shape(), std::move(y), {x},
                                     [dy = std::move(dy)](detail::Node<Scalar>& self) {
                                       self.parents[0]->ensure_grad() += self.grad * dy;
                                     });
}

template <typename Scalar>
BasicTensor<Scalar> sigmoid(const BasicTensor<Scalar>& x) {
  typename detail::Node<Scalar>::Array y = x.values().unaryExpr([](Scalar t) {
    if (t >= 0) return Scalar(1) / (Scalar(1) + std::exp(-t));
    const Scalar e = std::exp(t);
    return e / (Scalar(1) + e);
  });
  return detail::make_result<Scalar>(x.shape(), std::move(y), {x},
                                     [](detail::Node<Scalar>& self) {
                                       const auto& s = self.values;
                                       self.parents[0]->ensure_grad() += self.grad * s * (1 - s);
                                     });
}

/// Inverted dropout: in training mode zeroes each element with probability
/// `rate` and scales survivors by 1/(1-rate). Identity otherwise.
template <typename Scalar>
BasicTensor<Scalar> dropout(const BasicTensor<Scalar>& x, Scalar rate, bool training,
                            std::uint64_t seed) {
  if (!(rate >= 0) || rate >= 1) throw TensorError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0) return x;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<Scalar> unit(0, 1);
  typename detail::Node<Scalar>::Array keep(x.size());
  const Scalar survivor = Scalar(1) / (Scalar(1) - rate);
  for (Index i = 0; i < keep.size(); ++i) keep[i] = unit(rng) < rate ? Scalar(0) : survivor;
  auto out = detail::make_result<Scalar>(x.shape(), x.values() * keep, {x},
                                         [keep](detail::Node<Scalar>& self) {
                                           self.parents[0]->ensure_grad() += self.grad * keep;
                                         });
  out.node_ptr()->stochastic = true;
  return out;
}

/// Columns [start, start+len) of the last axis.
template <typename Scalar>
BasicTensor<Scalar> slice_last(const BasicTensor<Scalar>& x, Index start, Index len) {
  using Mat = RowMatrix<Scalar>;
  const Index n = x.dim(-1);
  if (start < 0 || len <= 0 || start + len > n) throw TensorError("slice out of range");
  const Index rows = x.size() / n;
  Shape shape = x.shape();
  shape.back() = len;
  Mat out = Eigen::Map<const Mat>(x.values().data(), rows, n).middleCols(start, len);
  typename detail::Node<Scalar>::Array flat =
      Eigen::Map<const typename detail::Node<Scalar>::Array>(out.data(), out.size());
  return detail::make_result<Scalar>(
      std::move(shape), std::move(flat), {x}, [rows, n, start, len](detail::Node<Scalar>& self) {
        Eigen::Map<Mat>(self.parents[0]->ensure_grad().data(), rows, n).middleCols(start, len) +=
            Eigen::Map<const Mat>(self.grad.data(), rows, len);
      });
}

/// Concatenation along the last axis; leading shapes must agree.
template <typename Scalar>
BasicTensor<Scalar> concat_last(const std::vector<BasicTensor<Scalar>>& parts) {
  using Mat = RowMatrix<Scalar>;
  if (parts.empty()) throw TensorError("concat of zero tensors");
  const Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  const Index rows = shape_size(lead);
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    if (Shape(p.shape().begin(), p.shape().end() - 1) != lead)
      throw TensorError("concat leading shapes differ");
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
  }
  Mat out(rows, total);
  Index col = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.middleCols(col, widths[i]) =
        Eigen::Map<const Mat>(parts[i].values().data(), rows, widths[i]);
    col += widths[i];
  }
  Shape shape = lead;
  shape.push_back(total);
  typename detail::Node<Scalar>::Array flat =
      Eigen::Map<const typename detail::Node<Scalar>::Array>(out.data(), out.size());
  return detail::make_result<Scalar>(
      std::move(shape), std::move(flat), parts,
      [widths, rows, total](detail::Node<Scalar>& self) {
        Eigen::Map<const Mat> g(self.grad.data(), rows, total);
        Index c = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
          auto& p = *self.parents[i];
          if (p.requires_grad)
            Eigen::Map<Mat>(p.ensure_grad().data(), rows, widths[i]) += g.middleCols(c, widths[i]);
          c += widths[i];
        }
      });
}

/// Mean binary cross-entropy of probabilities against {0,1} targets, with
/// predictions clamped to [clamp, 1-clamp].
template <typename Scalar>
BasicTensor<Scalar> binary_cross_entropy(const BasicTensor<Scalar>& prob,
                                         const std::vector<Scalar>& targets,
                                         Scalar clamp = Scalar(1e-12)) {
  using Array = typename detail::Node<Scalar>::Array;
  if (static_cast<Index>(targets.size()) != prob.size())
    throw TensorError("target count does not match prediction count");
  const Index n = prob.size();
  Array dp(n);
  Scalar total = 0;
  for (Index i = 0; i < n; ++i) {
    const Scalar p = prob.values()[i];
    const Scalar pc = std::clamp(p, clamp, Scalar(1) - clamp);
    const Scalar y = targets[static_cast<std::size_t>(i)];
    total += -(y * std::log(pc) + (1 - y) * std::log(1 - pc));
    const bool clamped = p < clamp || p > Scalar(1) - clamp;
    dp[i] = clamped ? Scalar(0) : (-y / pc + (1 - y) / (1 - pc)) / static_cast<Scalar>(n);
  }
  Array out(1);
  out[0] = total / static_cast<Scalar>(n);
  return detail::make_result<Scalar>({1}, std::move(out), {prob},
                                     [dp = std::move(dp)](detail::Node<Scalar>& self) {
                                       self.parents[0]->ensure_grad() += self.grad[0] * dp;
                                     });
}

/// Deterministic parameter initialisation. `uniform_fan` draws from
/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) with fan_in the second-to-last extent
/// (the input width of an x*W map), or the only extent for vectors.
template <typename Scalar = double>
BasicTensor<Scalar> param_init(const Shape& shape, InitScheme scheme, std::uint64_t seed) {
  if (shape.empty()) throw TensorError("param_init requires a non-empty shape");
  auto t = BasicTensor<Scalar>::zeros(shape, true);
  if (scheme == InitScheme::uniform_fan) {
    const Index fan_in = shape.size() >= 2 ? shape[shape.size() - 2] : shape[0];
    const Scalar bound = Scalar(1) / std::sqrt(static_cast<Scalar>(fan_in));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<Scalar> dist(-bound, bound);
    for (auto& v : t.mutable_values()) v = dist(rng);
  }
  return t;
}

}  // namespace ctg
