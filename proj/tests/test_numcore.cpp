#include "ctg/numcore.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ctg;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, bool requires_grad = true, double lo = -1,
                     double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (auto& v : t.mutable_values()) v = d(rng);
  return t;
}

Tensor from(Shape shape, std::vector<double> v, bool requires_grad = false) {
  return Tensor(std::move(shape), Eigen::Map<Eigen::ArrayXd>(v.data(), static_cast<Index>(v.size())),
                requires_grad);
}

// Central difference of f at coordinate i of x, written independently of grad_check.
double numeric_partial(const std::function<double()>& f, Tensor& x, Index i, double h = 1e-6) {
  double& xi = x.mutable_values()[i];
  const double saved = xi;
  xi = saved + h;
  const double up = f();
  xi = saved - h;
  const double down = f();
  xi = saved;
  return (up - down) / (2 * h);
}

}  // namespace

TEST(Tensor, ShapeAndValueCountAgree) {
  EXPECT_THROW(Tensor({2, 3}, Eigen::ArrayXd::Zero(5)), TensorError);
  EXPECT_THROW(Tensor::zeros({}), TensorError);
  EXPECT_THROW(Tensor::zeros({2, 0}), TensorError);
  const Tensor t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.size(), 6);
  EXPECT_EQ(t.dim(-1), 3);
}

TEST(ParamInit, ZerosScheme) {
  const Tensor t = param_init({2, 2}, InitScheme::zeros, 3);
  EXPECT_TRUE((t.values() == 0).all());
}

TEST(ParamInit, DeterministicForFixedSeed) {
  const Tensor a = param_init({4, 4}, InitScheme::uniform_fan, 7);
  const Tensor b = param_init({4, 4}, InitScheme::uniform_fan, 7);
  EXPECT_TRUE((a.values() == b.values()).all());
  const Tensor c = param_init({4, 4}, InitScheme::uniform_fan, 8);
  EXPECT_FALSE((a.values() == c.values()).all());
}

TEST(ParamInit, FanInBound) {
  const Tensor t = param_init({64, 64}, InitScheme::uniform_fan, 1);
  EXPECT_LE(t.values().abs().maxCoeff(), 1.0 / 8.0);
  EXPECT_GT(t.values().abs().maxCoeff(), 0.1);
}

TEST(ParamInit, EmptyShapeRejected) {
  EXPECT_THROW(param_init({}, InitScheme::zeros, 0), TensorError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye = from({2, 2}, {1, 0, 0, 1});
  const Tensor m = from({2, 2}, {1, 2, 3, 4});
  EXPECT_TRUE((matmul(eye, m).values() == m.values()).all());
}

TEST(Matmul, HandArithmetic) {
  EXPECT_DOUBLE_EQ(matmul(from({1, 2}, {1, 2}), from({2, 1}, {3, 4})).item(), 11.0);
}

TEST(Matmul, DimensionMismatchThrows) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), TensorError);
}

TEST(Matmul, BatchedBroadcastMatchesPerSliceProduct) {
  const Tensor a = random_tensor({3, 2, 4}, 1, false);
  const Tensor b = random_tensor({4, 5}, 2, false);
  const Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{3, 2, 5}));
  const RowMatrix<double> bm = b.matrix();
  for (Index s = 0; s < 3; ++s) {
    Eigen::Map<const RowMatrix<double>> as(a.values().data() + s * 8, 2, 4);
    Eigen::Map<const RowMatrix<double>> cs(c.values().data() + s * 10, 2, 5);
    EXPECT_LT((cs - as * bm).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Tensor a = random_tensor({3, 4}, 11);
  Tensor b = random_tensor({4, 2}, 12);
  backward(sum(matmul(a, b)));
  auto f = [&] { return sum(matmul(a, b)).item(); };
  for (Index i = 0; i < a.size(); ++i) {
    const double num = numeric_partial(f, a, i);
    EXPECT_LT(std::abs(num - a.grad()[i]) / std::max(1e-8, std::abs(num)), 1e-5);
  }
  // d/da sum(ab) is the row sums of b repeated for every row of a.
  const Eigen::VectorXd row_sums = b.matrix().rowwise().sum();
  for (Index r = 0; r < 3; ++r)
    for (Index k = 0; k < 4; ++k) EXPECT_NEAR(a.grad()[r * 4 + k], row_sums[k], 1e-12);
}

TEST(Softmax, SymmetricInput) {
  const Tensor s = softmax(from({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(s.values()[0], 0.5);
  EXPECT_DOUBLE_EQ(s.values()[1], 0.5);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Tensor s = softmax(from({2}, {1000, 0}));
  EXPECT_TRUE(s.values().isFinite().all());
  EXPECT_NEAR(s.values()[0], 1.0, 1e-15);
  EXPECT_NEAR(s.values()[1], 0.0, 1e-15);
}

TEST(Softmax, HandValues) {
  const Tensor s = softmax(from({3}, {1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(s.values()[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(s.values()[0], 0.0900, 1e-4);
  EXPECT_NEAR(s.values()[1], 0.2447, 1e-4);
  EXPECT_NEAR(s.values()[2], 0.6652, 1e-4);
}

TEST(Softmax, SumsToOneAndIsShiftInvariantAlongEachAxis) {
  const Tensor x = random_tensor({3, 4, 5}, 5, false, -4, 4);
  for (Index axis : {0, 1, 2}) {
    const Tensor s = softmax(x, axis);
    const Tensor shifted = softmax(add(x, Tensor::full({3, 4, 5}, 17.25)), axis);
    EXPECT_LT((s.values() - shifted.values()).abs().maxCoeff(), 1e-12);
    // Sum along `axis` with explicit strides.
    const Shape& sh = x.shape();
    Index inner = 1;
    for (Index d = axis + 1; d < 3; ++d) inner *= sh[static_cast<std::size_t>(d)];
    const Index n = sh[static_cast<std::size_t>(axis)];
    const Index outer = x.size() / (n * inner);
    for (Index o = 0; o < outer; ++o)
      for (Index i = 0; i < inner; ++i) {
        double total = 0;
        for (Index k = 0; k < n; ++k) total += s.values()[(o * n + k) * inner + i];
        EXPECT_NEAR(total, 1.0, 1e-12);
      }
  }
}

TEST(Softmax, MaskedEntriesGetZeroWeight) {
  const double inf = std::numeric_limits<double>::infinity();
  const Tensor s = softmax(from({3}, {0.3, -inf, 1.2}));
  EXPECT_EQ(s.values()[1], 0.0);
  EXPECT_NEAR(s.values().sum(), 1.0, 1e-15);
  EXPECT_THROW(softmax(from({2}, {-inf, -inf})), TensorError);
}

TEST(LayerNorm, ConstantVectorGivesZeros) {
  const Tensor y = layer_norm(Tensor::full({1, 4}, 3.0), Tensor::full({4}, 1.0), Tensor::zeros({4}));
  EXPECT_TRUE((y.values().abs() < 1e-12).all());
}

TEST(LayerNorm, StandardizedVectorNearlyUnchanged) {
  // mean 0, population variance 1
  const Tensor x = from({1, 4}, {-1, 1, -1, 1});
  const Tensor small_eps = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}), 1e-12);
  EXPECT_LT((small_eps.values() - x.values()).abs().maxCoeff(), 1e-6);
  const Tensor default_eps = layer_norm(x, Tensor::full({4}, 1.0), Tensor::zeros({4}));
  EXPECT_LT((default_eps.values() - x.values()).abs().maxCoeff(), 1e-5);
}

TEST(LayerNorm, HandMeanAndVariance) {
  const Tensor y = layer_norm(from({1, 2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-5);
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y.values()[0], -expect, 1e-15);
  EXPECT_NEAR(y.values()[1], expect, 1e-15);
}

TEST(LayerNorm, PerPositionMomentsPreAffine) {
  const Tensor x = random_tensor({20, 16}, 9, false, -3, 5);
  const Tensor y = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}));
  const auto m = y.matrix();
  for (Index r = 0; r < m.rows(); ++r) {
    const double mu = m.row(r).mean();
    const double var = (m.row(r).array() - mu).square().mean();
    EXPECT_LT(std::abs(mu), 1e-10);
    EXPECT_NEAR(var, 1.0, 1e-3);  // eps=1e-5 shrinks the variance by var/(var+eps)
  }
  const Tensor tight = layer_norm(x, Tensor::full({16}, 1.0), Tensor::zeros({16}), 1e-14);
  const auto mt = tight.matrix();
  for (Index r = 0; r < mt.rows(); ++r) {
    const double mu = mt.row(r).mean();
    EXPECT_NEAR((mt.row(r).array() - mu).square().mean(), 1.0, 1e-6);
  }
}

TEST(Activation, ReluValues) {
  const Tensor y = activation(from({2}, {-1, 2}), Activation::relu);
  EXPECT_EQ(y.values()[0], 0.0);
  EXPECT_EQ(y.values()[1], 2.0);
}

TEST(Activation, GeluExactForm) {
  EXPECT_EQ(activation(from({1}, {0}), Activation::gelu).item(), 0.0);
  const double g1 = activation(from({1}, {1}), Activation::gelu).item();
  EXPECT_NEAR(g1, 0.8413, 1e-3);
  EXPECT_NEAR(g1, 0.5 * (1 + std::erf(1 / std::sqrt(2.0))), 1e-15);
}

TEST(Activation, EluValues) {
  const Tensor y = activation(from({2}, {-1, 2}), Activation::elu);
  EXPECT_NEAR(y.values()[0], std::exp(-1.0) - 1, 1e-15);
  EXPECT_EQ(y.values()[1], 2.0);
}

TEST(Activation, UnknownNameRejected) {
  EXPECT_EQ(parse_activation("gelu"), Activation::gelu);
  EXPECT_THROW(parse_activation("swish"), TensorError);
}

TEST(Dropout, ZeroRateIsIdentity) {
  const Tensor x = random_tensor({50}, 3, false);
  const Tensor y = dropout(x, 0.0, true, 1);
  EXPECT_TRUE((x.values() == y.values()).all());
}

TEST(Dropout, InferencePassesThrough) {
  const Tensor x = random_tensor({50}, 3, false);
  const Tensor y = dropout(x, 0.7, false, 1);
  EXPECT_TRUE((x.values() == y.values()).all());
  EXPECT_FALSE(y.stochastic());
}

TEST(Dropout, RateOutsideRangeRejected) {
  EXPECT_THROW(dropout(Tensor::zeros({3}), 1.0, true, 0), TensorError);
  EXPECT_THROW(dropout(Tensor::zeros({3}), -0.1, true, 0), TensorError);
}

TEST(Dropout, StatisticsAtHalfRate) {
  const Index n = 100000;
  const Tensor x = random_tensor({n}, 21, false, 0.5, 1.5);
  const Tensor y = dropout(x, 0.5, true, 99);
  const auto kept = (y.values() != 0);
  const double frac = kept.cast<double>().mean();
  EXPECT_NEAR(frac, 0.5, 0.01);
  // Survivors are scaled by 2, so the output mean tracks the input mean.
  EXPECT_NEAR(y.values().mean() / x.values().mean(), 1.0, 0.02);
  for (Index i = 0; i < 1000; ++i)
    if (kept[i]) EXPECT_DOUBLE_EQ(y.values()[i], 2 * x.values()[i]);
  EXPECT_TRUE(y.stochastic());
}

TEST(Dropout, SameSeedReplaysBitIdentically) {
  const Tensor x = random_tensor({1000}, 4, false);
  EXPECT_TRUE((dropout(x, 0.3, true, 5).values() == dropout(x, 0.3, true, 5).values()).all());
}

TEST(Backward, SumGivesOnes) {
  Tensor x = random_tensor({2, 3}, 1);
  backward(sum(x));
  EXPECT_TRUE((x.grad() == 1).all());
}

TEST(Backward, SumOfSquares) {
  Tensor x = from({2}, {1, 2}, true);
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Backward, FanOutAccumulates) {
  Tensor x = from({1}, {3}, true);
  const Tensor y = add(mul(x, x), scale(x, 5.0));  // x^2 + 5x, x used three times
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 11.0);
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = random_tensor({3}, 1);
  EXPECT_THROW(backward(scale(x, 2.0)), TensorError);
}

TEST(Backward, SecondPassWithoutForwardRejected) {
  Tensor x = random_tensor({3}, 1);
  const Tensor loss = sum(mul(x, x));
  backward(loss);
  EXPECT_THROW(backward(loss), TensorError);
  // A fresh forward is fine and accumulates into the leaf.
  const Eigen::ArrayXd first = x.grad();
  backward(sum(mul(x, x)));
  EXPECT_LT((x.grad() - 2 * first).abs().maxCoeff(), 1e-15);
}

TEST(Backward, ConsumedGraphCannotFeedNewOps) {
  Tensor x = random_tensor({3}, 1);
  const Tensor mid = mul(x, x);
  backward(sum(mid));
  EXPECT_THROW(sum(mid), TensorError);
}

TEST(Graph, RecordIsTopological) {
  Tensor a = random_tensor({2, 2}, 1);
  Tensor b = random_tensor({2, 2}, 2);
  const Tensor c = matmul(a, b);
  const Tensor d = add(c, a);
  const Tensor e = sum(mul(d, c));
  const auto g = Graph<double>::record(e);
  EXPECT_TRUE(g.is_topological());
  EXPECT_EQ(g.size(), 6u);
}

TEST(Broadcast, BiasRowAddsToEveryRow) {
  Tensor x = random_tensor({4, 3}, 1);
  Tensor b = random_tensor({1, 3}, 2);
  const Tensor y = add(x, b);
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 3; ++c)
      EXPECT_DOUBLE_EQ(y.values()[r * 3 + c], x.values()[r * 3 + c] + b.values()[c]);
  backward(sum(y));
  EXPECT_TRUE((b.grad() == 4).all());
  EXPECT_THROW(add(Tensor::zeros({4, 3}), Tensor::zeros({4})), TensorError);
}

TEST(SliceConcat, RoundTrip) {
  const Tensor x = random_tensor({2, 3, 6}, 8, false);
  const Tensor y = concat_last<double>({slice_last(x, 0, 2), slice_last(x, 2, 4)});
  EXPECT_TRUE((x.values() == y.values()).all());
  EXPECT_THROW(slice_last(x, 4, 3), TensorError);
}

TEST(Bce, MatchesFormulaAndClamps) {
  const Tensor p = from({2}, {0.8, 0.3});
  const double expect = -(std::log(0.8) + std::log(0.7)) / 2;
  EXPECT_NEAR(binary_cross_entropy(p, {1.0, 0.0}).item(), expect, 1e-15);
  EXPECT_TRUE(std::isfinite(binary_cross_entropy(from({1}, {0.0}), {1.0}).item()));
}

TEST(GradCheck, SumOfSquaresIsExact) {
  Tensor x = random_tensor({5, 4}, 31);
  GradCheckOptions opts;
  const auto r = grad_check<double>([&] { return sum(mul(x, x)); }, {x}, opts);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-7);
  EXPECT_EQ(r.coords_checked, 20);
}

TEST(GradCheck, SoftmaxMatmulChain) {
  Tensor a = random_tensor({3, 4}, 41);
  Tensor b = random_tensor({4, 5}, 42);
  const Tensor w = random_tensor({3, 5}, 43, false);
  const auto r = grad_check<double>([&] { return sum(mul(softmax(matmul(a, b)), w)); }, {a, b});
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(GradCheck, EveryDifferentiableOp) {
  Tensor x = random_tensor({2, 3, 4}, 51);
  Tensor w = random_tensor({4, 4}, 52);
  Tensor g = random_tensor({4}, 53, true, 0.5, 1.5);
  Tensor b = random_tensor({4}, 54);
  Tensor bias = random_tensor({1, 4}, 55);
  const Tensor target = random_tensor({2, 3, 4}, 56, false);
  for (Activation act : {Activation::relu, Activation::gelu, Activation::elu}) {
    auto f = [&] {
      Tensor h = add(matmul(x, w), bias);
      h = layer_norm(h, g, b);
      h = activation(h, act);
      h = sub(h, target);
      Tensor att = softmax(matmul(h, transpose(h)), -1);
      Tensor y = concat_last<double>({slice_last(h, 0, 2), scale(slice_last(h, 2, 2), 0.5)});
      Tensor z = add(matmul(att, y), reshape(sigmoid(x), {2, 3, 4}));
      return mean(mul(z, z));
    };
    const auto r = grad_check<double>(f, {x, w, g, b, bias});
    EXPECT_TRUE(r.passed) << to_string(act) << " rel " << r.max_rel_error;
  }
}

TEST(GradCheck, DropoutRejectedAsNondeterministic) {
  Tensor x = random_tensor({10}, 61);
  auto f = [&] { return sum(dropout(x, 0.5, true, 3)); };
  EXPECT_THROW(grad_check<double>(f, {x}), NondeterministicFunction);
  try {
    grad_check<double>(f, {x});
  } catch (const NondeterministicFunction& e) {
    EXPECT_NE(std::string(e.what()).find("nondeterministic function"), std::string::npos);
  }
}

TEST(Scalar, FloatInstantiationWorks) {
  BasicTensor<float> a({2, 2}, Eigen::ArrayXf::Constant(4, 1.5f), true);
  const auto loss = sum(matmul(a, a));
  backward(loss);
  EXPECT_FLOAT_EQ(loss.item(), 18.0f);
  EXPECT_TRUE((a.grad() == 6.0f).all());
}
