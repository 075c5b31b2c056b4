#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "prismer/error.hpp"
#include "prismer/grad_check.hpp"
#include "prismer/ops.hpp"
#include "test_support.hpp"

namespace prismer {
namespace {

using testing::random_tensor;

constexpr double kGradTol = 1e-4;

TEST(Tensor, ExtentsMustMatchData) {
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 0}), DimensionError);
  const auto t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_DOUBLE_EQ(t.at({1, 2}), 6.0);
}

TEST(Tensor, HandlesShareStorage) {
  auto a = Tensor::zeros({2});
  auto b = a;
  b.mutable_data()[0] = 4.0;
  EXPECT_DOUBLE_EQ(a.data()[0], 4.0);
  auto c = a.clone();
  c.mutable_data()[0] = 1.0;
  EXPECT_DOUBLE_EQ(a.data()[0], 4.0);
}

TEST(Tensor, BackwardRequiresScalar) {
  const auto a = random_tensor({2, 2}, 1, true);
  EXPECT_THROW(ops::scale(a, 2.0).backward(), ContractError);
}

TEST(Tensor, FrozenBranchNeverAccumulates) {
  auto trainable = random_tensor({3, 3}, 1, true);
  auto frozen = random_tensor({3, 3}, 2, false);
  const auto loss = ops::sum(ops::mul(ops::matmul(trainable, frozen), ops::matmul(frozen, frozen)));
  loss.backward();
  EXPECT_TRUE(trainable.has_grad());
  EXPECT_EQ(trainable.grad().size(), trainable.numel());
  EXPECT_FALSE(frozen.has_grad());
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  auto a = random_tensor({2, 2}, 3, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(NoGradGuard::recording());
    const auto y = ops::sum(ops::mul(a, a));
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(NoGradGuard::recording());
  EXPECT_TRUE(ops::sum(a).requires_grad());
}

TEST(Tensor, SharedSubgraphGradientAccumulates) {
  // y = sum(x*x + x) -> dy/dx = 2x + 1, with x reached by two paths.
  auto x = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  ops::sum(ops::add(ops::mul(x, x), x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 2.0);
}

TEST(Matmul, IdentityIsNeutral) {
  const auto a = random_tensor({3, 3}, 4);
  const auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto c = ops::matmul(a, eye);
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(c.data()[i], a.data()[i]);
}

TEST(Matmul, SmallProductMatchesTripleLoop) {
  const std::vector<double> a = {1, 2, 3, 4}, b = {5, 6};
  const auto c = ops::matmul(Tensor::from({2, 2}, a), Tensor::from({2, 1}, b));
  const auto oracle = testing::naive_matmul(a, b, 2, 2, 1);
  ASSERT_EQ(oracle, (std::vector<double>{17, 39}));
  EXPECT_DOUBLE_EQ(c.data()[0], oracle[0]);
  EXPECT_DOUBLE_EQ(c.data()[1], oracle[1]);
}

TEST(Matmul, RandomProductMatchesTripleLoop) {
  const auto a = random_tensor({5, 7}, 5);
  const auto b = random_tensor({7, 4}, 6);
  const auto c = ops::matmul(a, b);
  const auto oracle = testing::naive_matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, 5,
                                            7, 4);
  for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(c.data()[i], oracle[i], 1e-12);
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    ops::matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("[2x3]"), std::string::npos) << what;
    EXPECT_NE(what.find("[4x2]"), std::string::npos) << what;
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  auto a = random_tensor({3, 4}, 7, true);
  auto b = random_tensor({4, 2}, 8, true);
  std::vector<Tensor> params{a, b};
  const double err = grad_check([&] { return ops::sum(ops::matmul(a, b)); }, params);
  EXPECT_LT(err, 1e-6);
}

TEST(Softmax, SymmetricInputIsUniform) {
  const auto s = ops::softmax(Tensor::full({4}, 2.5), 0);
  for (double v : s.data()) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Softmax, AnalyticPair) {
  const auto s = ops::softmax(Tensor::from({2}, {0.0, std::log(3.0)}), 0);
  EXPECT_NEAR(s.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(s.data()[1], 0.75, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  const auto x = random_tensor({3, 5}, 9);
  const auto shifted = ops::add(x, Tensor::full({3, 5}, 7.0));
  const auto a = ops::softmax(x, 1);
  const auto b = ops::softmax(shifted, 1);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-12);
}

TEST(Softmax, SlicesAreDistributionsAlongEitherAxis) {
  const auto x = random_tensor({4, 6}, 10, false, 5.0);
  for (std::size_t axis : {0u, 1u}) {
    const auto s = ops::softmax(x, axis);
    const std::size_t rows = 4, cols = 6;
    const std::size_t slices = axis == 0 ? cols : rows;
    const std::size_t len = axis == 0 ? rows : cols;
    for (std::size_t k = 0; k < slices; ++k) {
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double v = axis == 0 ? s.at({j, k}) : s.at({k, j});
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-9);
    }
  }
}

TEST(Softmax, NonFiniteInputRejected) {
  EXPECT_THROW(ops::softmax(Tensor::from({2}, {0.0, NAN}), 0), NumericError);
}

TEST(Softmax, GradientMatchesFiniteDifferences) {
  auto x = random_tensor({3, 4}, 11, true);
  const auto w = random_tensor({3, 4}, 12);
  std::vector<Tensor> params{x};
  EXPECT_LT(grad_check([&] { return ops::sum(ops::mul(ops::softmax(x, 1), w)); }, params), kGradTol);
  EXPECT_LT(grad_check([&] { return ops::sum(ops::mul(ops::softmax(x, 0), w)); }, params), kGradTol);
}

TEST(LayerNorm, ConstantSliceBecomesZero) {
  const auto y = ops::layer_norm(Tensor::full({2, 4}, 3.0), Tensor::full({4}, 1.0), Tensor::zeros({4}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, TwoElementAnalytic) {
  const auto y = ops::layer_norm(Tensor::from({2}, {1.0, 3.0}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-12);
  EXPECT_NEAR(y.data()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.data()[1], 1.0, 1e-9);
}

TEST(LayerNorm, AffineAppliedAfterNormalisation) {
  const auto y =
      ops::layer_norm(Tensor::from({2}, {1.0, 3.0}), Tensor::from({2}, {2.0, 3.0}), Tensor::from({2}, {0.5, -1.0}), 1e-12);
  EXPECT_NEAR(y.data()[0], -1.5, 1e-9);
  EXPECT_NEAR(y.data()[1], 2.0, 1e-9);
}

TEST(LayerNorm, RejectsNonPositiveEps) {
  EXPECT_THROW(ops::layer_norm(Tensor::zeros({2}), Tensor::zeros({2}), Tensor::zeros({2}), 0.0), RangeError);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  auto x = random_tensor({3, 5}, 13, true);
  auto gain = random_tensor({5}, 14, true);
  auto bias = random_tensor({5}, 15, true);
  const auto w = random_tensor({3, 5}, 16);
  std::vector<Tensor> params{x, gain, bias};
  const double err = grad_check([&] { return ops::sum(ops::mul(ops::layer_norm(x, gain, bias), w)); }, params);
  EXPECT_LT(err, 1e-5);
}

TEST(SquaredRelu, ValuesAndDerivative) {
  auto x = Tensor::from({3}, {-2.0, 3.0, 0.0}, true);
  const auto y = ops::squared_relu(x);
  EXPECT_DOUBLE_EQ(y.data()[0], 0.0);
  EXPECT_DOUBLE_EQ(y.data()[1], 9.0);
  EXPECT_DOUBLE_EQ(y.data()[2], 0.0);
  ops::sum(y).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 6.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 0.0);
}

TEST(Activations, GradientsMatchFiniteDifferences) {
  // keep samples away from the kink at 0 where central differences are biased
  auto x = Tensor::from({6}, {-1.3, -0.4, 0.3, 0.9, 1.7, -2.2}, true);
  const auto w = random_tensor({6}, 17);
  std::vector<Tensor> params{x};
  EXPECT_LT(grad_check([&] { return ops::sum(ops::mul(ops::squared_relu(x), w)); }, params), kGradTol);
  EXPECT_LT(grad_check([&] { return ops::sum(ops::mul(ops::relu(x), w)); }, params), kGradTol);
  auto g = random_tensor({2, 5}, 18, true);
  std::vector<Tensor> gparams{g};
  EXPECT_LT(grad_check([&] { return ops::sum(ops::mul(ops::gelu(g), ops::gelu(g))); }, gparams), kGradTol);
}

TEST(Conv2d, ConstantImageInterior) {
  const auto x = Tensor::full({5, 5, 1}, 5.0);
  const auto k = Tensor::full({3, 3, 1, 1}, 1.0);
  const auto y = ops::conv2d(x, k, 1);
  ASSERT_EQ(y.shape(), (Shape{5, 5, 1}));
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 1; j < 4; ++j) EXPECT_DOUBLE_EQ(y.at({i, j, 0}), 45.0);
  EXPECT_DOUBLE_EQ(y.at({0, 0, 0}), 20.0);  // corner sees a 2x2 window
}

TEST(Conv2d, ImpulseReproducesFlippedKernel) {
  auto x = Tensor::zeros({5, 5, 1});
  x.mutable_data()[2 * 5 + 2] = 1.0;
  std::vector<double> kv(9);
  std::iota(kv.begin(), kv.end(), 1.0);
  const auto y = ops::conv2d(x, Tensor::from({3, 3, 1, 1}, kv), 1);
  // cross-correlation: out[2+di][2+dj] = k[1-di][1-dj]
  for (int di = -1; di <= 1; ++di)
    for (int dj = -1; dj <= 1; ++dj) {
      const auto out = y.at({static_cast<std::size_t>(2 + di), static_cast<std::size_t>(2 + dj), 0});
      EXPECT_DOUBLE_EQ(out, kv[static_cast<std::size_t>((1 - di) * 3 + (1 - dj))]);
    }
  EXPECT_DOUBLE_EQ(y.at({0, 0, 0}), 0.0);
}

TEST(Conv2d, StrideTwoHalvesWithCeiling) {
  for (std::size_t side : {1u, 2u, 5u, 8u, 9u}) {
    const auto y = ops::conv2d(Tensor::zeros({side, side + 1, 2}), Tensor::zeros({3, 3, 2, 3}), 2);
    EXPECT_EQ(y.shape(), (Shape{(side + 1) / 2, (side + 2) / 2, 3}));
  }
}

TEST(Conv2d, RejectsBadArguments) {
  EXPECT_THROW(ops::conv2d(Tensor::zeros({4, 4, 2}), Tensor::zeros({3, 3, 1, 1}), 1), DimensionError);
  EXPECT_THROW(ops::conv2d(Tensor::zeros({4, 4, 1}), Tensor::zeros({3, 3, 1, 1}), 3), ContractError);
  EXPECT_THROW(ops::conv2d(Tensor::zeros({2, 2, 1}), Tensor::zeros({3, 3, 1, 1}), 1, 0), DimensionError);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  for (std::size_t stride : {1u, 2u}) {
    auto x = random_tensor({5, 6, 2}, 19, true);
    auto k = random_tensor({3, 3, 2, 3}, 20, true);
    const auto w = random_tensor({(5 + stride - 1) / stride, (6 + stride - 1) / stride, 3}, 21);
    std::vector<Tensor> params{x, k};
    const double err = grad_check([&] { return ops::sum(ops::mul(ops::conv2d(x, k, stride), w)); }, params);
    EXPECT_LT(err, 1e-5) << "stride " << stride;
  }
}

TEST(CrossEntropy, ConfidentPredictionNearZero) {
  std::vector<double> logits(3 * 5, 0.0);
  const std::vector<int> targets = {4, 0, 2};
  for (std::size_t t = 0; t < 3; ++t) logits[t * 5 + static_cast<std::size_t>(targets[t])] = 40.0;
  EXPECT_LT(ops::cross_entropy(Tensor::from({3, 5}, logits), targets).item(), 1e-6);
}

TEST(CrossEntropy, UniformLogitsGiveLogV) {
  const std::vector<int> targets = {3, 7};
  EXPECT_NEAR(ops::cross_entropy(Tensor::zeros({2, 8}), targets).item(), std::log(8.0), 1e-12);
}

TEST(CrossEntropy, TwoTokenHandComputation) {
  const std::vector<double> logits = {1.0, 2.0, 0.5, -1.0, 0.0, 3.0};
  const std::vector<int> targets = {1, 0};
  const double row0 = -(2.0 - std::log(std::exp(1.0) + std::exp(2.0) + std::exp(0.5)));
  const double row1 = -(-1.0 - std::log(std::exp(-1.0) + std::exp(0.0) + std::exp(3.0)));
  const auto logit_tensor = Tensor::from({2, 3}, logits);
  EXPECT_NEAR(ops::cross_entropy(logit_tensor, targets).item(), 0.5 * (row0 + row1), 1e-12);
  EXPECT_NEAR(ops::cross_entropy(logit_tensor, targets, {false, true}).item(), row1, 1e-12);
}

TEST(CrossEntropy, MaskedPositionsContributeNothing) {
  auto logits = random_tensor({3, 4}, 22, true);
  const std::vector<int> targets = {1, 2, 3};
  ops::cross_entropy(logits, targets, {true, false, true}).backward();
  for (std::size_t v = 0; v < 4; ++v) EXPECT_DOUBLE_EQ(logits.grad()[4 + v], 0.0);
}

TEST(CrossEntropy, Errors) {
  const std::vector<int> targets = {1, 2};
  EXPECT_THROW(ops::cross_entropy(Tensor::zeros({2, 4}), targets, {false, false}), EmptyLossError);
  const std::vector<int> bad = {1, 4};
  EXPECT_THROW(ops::cross_entropy(Tensor::zeros({2, 4}), bad), RangeError);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  auto logits = random_tensor({4, 6}, 23, true);
  const std::vector<int> targets = {0, 5, 2, 2};
  std::vector<Tensor> params{logits};
  EXPECT_LT(grad_check([&] { return ops::cross_entropy(logits, targets, {true, true, false, true}); }, params),
            kGradTol);
}

TEST(StructuralOps, GradientsMatchFiniteDifferences) {
  auto a = random_tensor({4, 3}, 24, true);
  auto b = random_tensor({2, 3}, 25, true);
  auto c = random_tensor({4, 2}, 26, true);
  auto bias = random_tensor({3}, 27, true);
  auto table = random_tensor({5, 3}, 28, true);
  std::vector<Tensor> params{a, b, c, bias, table};
  const std::vector<std::size_t> gather = {4, 0, 4, 2};
  const std::vector<int> ids = {-1, 3, 0, 3};
  const auto build = [&] {
    std::vector<Tensor> rows{a, b};
    std::vector<Tensor> cols{a, c};
    const auto stacked = ops::concat_rows(rows);                     // [6 x 3]
    const auto wide = ops::concat_cols(cols);                        // [4 x 5]
    const auto picked = ops::gather_rows(table, gather);             // [4 x 3]
    const auto indexed = ops::add_indexed_rows(a, table, ids);       // [4 x 3]
    const auto mixed = ops::add_bias(ops::sub(indexed, picked), bias);
    auto out = ops::sum(ops::mul(ops::slice_rows(stacked, 1, 4), mixed));
    out = ops::add(out, ops::sum(ops::mul(ops::slice_rows(ops::slice_cols(wide, 2, 3), 1, 2), ops::transpose(ops::reshape(b, {3, 2})))));
    out = ops::add(out, ops::scale(ops::mean(ops::mul(wide, wide)), 0.7));
    return out;
  };
  EXPECT_LT(grad_check(build, params), kGradTol);
}

TEST(StructuralOps, ShapeErrors) {
  EXPECT_THROW(ops::add(Tensor::zeros({2, 2}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(ops::reshape(Tensor::zeros({2, 3}), {4}), DimensionError);
  EXPECT_THROW(ops::slice_rows(Tensor::zeros({2, 3}), 1, 2), DimensionError);
  const std::vector<std::size_t> idx = {3};
  EXPECT_THROW(ops::gather_rows(Tensor::zeros({2, 3}), idx), DimensionError);
}

TEST(GradCheck, LinearFunctionIsExact) {
  auto x = random_tensor({4}, 29, true);
  std::vector<Tensor> params{x};
  EXPECT_LT(grad_check([&] { return ops::sum(ops::scale(x, 3.0)); }, params), 1e-9);
}

TEST(GradCheck, RejectsNonScalarOutput) {
  auto x = random_tensor({4}, 30, true);
  std::vector<Tensor> params{x};
  EXPECT_THROW(grad_check([&] { return ops::scale(x, 3.0); }, params), ContractError);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // detach() hides one path from backward, so the analytic gradient is off
  auto x = random_tensor({3}, 31, true);
  std::vector<Tensor> params{x};
  EXPECT_GT(grad_check([&] { return ops::sum(ops::mul(x, x.detach())); }, params), 0.1);
}

}  // namespace
}  // namespace prismer
