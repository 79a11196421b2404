#include <gtest/gtest.h>

#include <cmath>
#include <unordered_set>

#include "test_util.hpp"
#include "weakenlab/grad_check.hpp"
#include "weakenlab/ops.hpp"

using namespace weakenlab;
using weakenlab::testing::random_tensor;
using weakenlab::testing::to_vector;

namespace {

// Scalar projection of a tensor-valued op with fixed random weights, so every
// output element contributes a distinct gradient.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, random_tensor(rng, y.shape())));
}

}  // namespace

TEST(Tensor, RejectsDataShapeMismatch) {
  EXPECT_THROW(Tensor(Shape{2, 2}, {1, 2, 3}), ShapeError);
}

TEST(Add, Elementwise) {
  const Tensor a({2}, {1, 2});
  const Tensor b({2}, {3, 4});
  EXPECT_EQ(to_vector(add(a, b)), (std::vector<double>{4, 6}));
}

TEST(Add, ZeroIsIdentity) {
  Rng rng(1);
  const Tensor x = random_tensor(rng, {3, 4});
  EXPECT_EQ(to_vector(add(x, Tensor::zeros({3, 4}))), to_vector(x));
}

TEST(Add, BiasBroadcastSumsGradientOverRows) {
  Tensor x = Tensor::zeros({3, 2}, true);
  Tensor b({2}, {1, -1}, true);
  const Tensor y = add(x, b);
  EXPECT_EQ(to_vector(y), (std::vector<double>{1, -1, 1, -1, 1, -1}));
  backward(sum(y));
  EXPECT_EQ(to_vector(Tensor({2}, {b.grad()[0], b.grad()[1]})), (std::vector<double>{3, 3}));
}

TEST(Add, RejectsMismatch) {
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST(Add, BackwardOfSumIsOnes) {
  Tensor x = Tensor::zeros({2, 3}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(ScalarMul, ScalesAndBackpropagates) {
  Tensor x({3}, {1, 2, 3}, true);
  const Tensor y = scalar_mul(x, 0.2);
  EXPECT_DOUBLE_EQ(y.at(0), 0.2);
  EXPECT_DOUBLE_EQ(y.at(1), 0.4);
  EXPECT_DOUBLE_EQ(y.at(2), 0.6);
  EXPECT_EQ(to_vector(scalar_mul(x, 1.0)), to_vector(x));

  const Tensor g({3}, {1.5, -2.0, 4.0});
  backward(sum(mul(y, g)));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 0.2 * g.at(i));
}

TEST(ScalarMul, RejectsNonFiniteFactor) {
  const Tensor x({1}, {1});
  EXPECT_THROW(scalar_mul(x, std::nan("")), std::invalid_argument);
  EXPECT_THROW(scalar_mul(x, INFINITY), std::invalid_argument);
}

TEST(ScalarMul, Linearity) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor x = random_tensor(rng, {5}, -10, 10);
    const double a = rng.uniform(-3, 3), b = rng.uniform(-3, 3);
    const Tensor once = scalar_mul(x, a * b);
    const Tensor twice = scalar_mul(scalar_mul(x, a), b);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(once.at(i), twice.at(i), 1e-12);
  }
}

TEST(Matmul, IdentityAndArithmetic) {
  Rng rng(3);
  const Tensor x = random_tensor(rng, {3, 2});
  const Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(to_vector(matmul(eye, x)), to_vector(x));

  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor ones({2, 1}, {1, 1});
  const Tensor c = matmul(a, ones);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(to_vector(c), (std::vector<double>{3, 7}));
}

TEST(Matmul, RejectsInnerMismatch) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  EXPECT_THROW(matmul(Tensor::zeros({6}), Tensor::zeros({6, 1})), ShapeError);
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  Rng rng(11);
  const Tensor a = random_tensor(rng, {4, 3});
  const Tensor b = random_tensor(rng, {3, 2});
  EXPECT_LT(grad_check([&](const Tensor& v) { return project(matmul(v, b), 5); }, a), 1e-6);
  EXPECT_LT(grad_check([&](const Tensor& v) { return project(matmul(a, v), 5); }, b), 1e-6);
}

TEST(Conv2d, UnitKernelIsIdentity) {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {2, 1, 4, 5});
  const Tensor k({1, 1, 1, 1}, {1});
  EXPECT_EQ(to_vector(conv2d(x, k)), to_vector(x));
}

TEST(Conv2d, OnesKernelSumsWindow) {
  const Tensor x = Tensor::full({1, 1, 2, 2}, 1.0);
  const Tensor k = Tensor::full({1, 1, 2, 2}, 1.0);
  const Tensor y = conv2d(x, k);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.item(), 4.0);
}

TEST(Conv2d, OutputGeometry) {
  const Tensor y = conv2d(Tensor::zeros({2, 3, 7, 6}), Tensor::zeros({4, 3, 3, 2}), {2, 1});
  // floor((7+2-3)/2)+1 = 4, floor((6+2-2)/2)+1 = 4
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 4}));
}

TEST(Conv2d, RejectsInvalidGeometry) {
  EXPECT_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3})), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 1, 3, 3})), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 3, 3})), ShapeError);
  EXPECT_NO_THROW(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), {1, 1}));
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(21);
  const Tensor x = random_tensor(rng, {1, 2, 5, 5});
  const Tensor k = random_tensor(rng, {3, 2, 3, 3});
  const Tensor b = random_tensor(rng, {3});
  const Conv2dGeometry geo{1, 1};
  EXPECT_LT(grad_check([&](const Tensor& v) { return project(conv2d(v, k, b, geo), 9); }, x), 1e-5);
  EXPECT_LT(grad_check([&](const Tensor& v) { return project(conv2d(x, v, b, geo), 9); }, k), 1e-5);
  EXPECT_LT(grad_check([&](const Tensor& v) { return project(conv2d(x, k, v, geo), 9); }, b), 1e-5);
  const Conv2dGeometry strided{2, 0};
  EXPECT_LT(grad_check([&](const Tensor& v) { return project(conv2d(v, k, strided), 9); }, x), 1e-5);
}

TEST(Relu, DefinitionAndZeroSubgradient) {
  Tensor x({3}, {-1, 0, 2}, true);
  const Tensor y = relu(x);
  EXPECT_EQ(to_vector(y), (std::vector<double>{0, 0, 2}));
  backward(sum(y));
  EXPECT_EQ(to_vector(Tensor({3}, {x.grad()[0], x.grad()[1], x.grad()[2]})),
            (std::vector<double>{0, 0, 1}));
}

TEST(MaxPool, PicksWindowMaximumAndRoutesGradient) {
  Tensor x({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 8, 1}, true);
  const Tensor y = max_pool2d(x, 2);
  EXPECT_EQ(to_vector(y), (std::vector<double>{5, 8}));
  backward(sum(y));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()),
            (std::vector<double>{0, 1, 0, 0, 0, 0, 1, 0}));
}

TEST(MaxPool, RejectsOddSpatialSize) {
  EXPECT_THROW(max_pool2d(Tensor::zeros({1, 1, 3, 4}), 2), ShapeError);
  EXPECT_THROW(max_pool2d(Tensor::zeros({1, 1, 4, 5}), 2), ShapeError);
}

TEST(Flatten, KeepsBatchAxis) {
  EXPECT_EQ(flatten(Tensor::zeros({3, 2, 2, 2})).shape(), (Shape{3, 8}));
}

TEST(LogSoftmax, SymmetricPair) {
  const Tensor y = log_softmax(Tensor({1, 2}, {0, 0}), 1);
  EXPECT_DOUBLE_EQ(y.at(0), -std::log(2.0));
  EXPECT_DOUBLE_EQ(y.at(1), -std::log(2.0));
}

TEST(LogSoftmax, NormalizesForRandomInputs) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor v = random_tensor(rng, {3, 7}, -50, 50);
    const Tensor y = log_softmax(v, 1);
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) total += std::exp(y.at(r * 7 + c));
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(LogSoftmax, StableForHugeLogits) {
  const Tensor y = log_softmax(Tensor({1, 2}, {1000, 0}), 1);
  EXPECT_TRUE(std::isfinite(y.at(1)));
  EXPECT_NEAR(y.at(0), 0.0, 1e-12);
  EXPECT_NEAR(y.at(1), -1000.0, 1e-9);
}

TEST(LogSoftmax, GradientAlongEitherAxis) {
  Rng rng(8);
  const Tensor x = random_tensor(rng, {3, 4}, -2, 2);
  EXPECT_LT(grad_check([](const Tensor& v) { return project(log_softmax(v, 1), 2); }, x), 1e-6);
  EXPECT_LT(grad_check([](const Tensor& v) { return project(log_softmax(v, 0), 2); }, x), 1e-6);
}

TEST(Backward, SumGivesOnesAndWeakenedSumGivesScaledOnes) {
  Tensor x = Tensor::zeros({4}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);

  const double ws = 0.8;
  Tensor z = Tensor::full({4}, 2.0, true);
  backward(sum(scalar_mul(z, 1.0 - ws)));
  for (double g : z.grad()) EXPECT_DOUBLE_EQ(g, 1.0 - ws);
}

TEST(Backward, RejectsNonScalarAndDetachedRoots) {
  Tensor x = Tensor::zeros({2}, true);
  EXPECT_THROW(backward(scalar_mul(x, 2.0)), ShapeError);
  EXPECT_THROW(backward(sum(Tensor::zeros({2}))), std::logic_error);
}

TEST(Backward, FanOutAccumulates) {
  Tensor x({2}, {1, 3}, true);
  backward(sum(add(mul(x, x), x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 7.0);
  // A second backward accumulates on top.
  backward(sum(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
}

TEST(Tape, TopologicalOrderAndRelease) {
  Tensor x({2}, {1, 2}, true);
  Tensor w({2}, {3, 4}, true);
  const Tensor h = mul(x, w);
  const Tensor loss = sum(add(h, scalar_mul(h, 2.0)));
  Tape tape = Tape::record(loss);
  ASSERT_EQ(tape.size(), 4u);  // mul, scalar_mul, add, sum; h visited once
  std::unordered_set<const detail::TensorImpl*> seen;
  for (const auto& entry : tape.entries()) {
    for (const auto& input : entry->node->inputs) {
      if (input->node) {
        EXPECT_TRUE(seen.count(input.get()));
      }
    }
    EXPECT_TRUE(seen.insert(entry.get()).second);
  }
  EXPECT_EQ(tape.entries().back().get(), loss.impl().get());
  tape.backward();
  EXPECT_TRUE(loss.is_leaf());
  EXPECT_TRUE(h.is_leaf());
  EXPECT_DOUBLE_EQ(x.grad()[1], 3.0 * 4.0);
}

TEST(GradCheck, SumOfSquares) {
  Rng rng(2);
  const Tensor x = random_tensor(rng, {6}, -2, 2);
  EXPECT_LT(grad_check([](const Tensor& v) { return sum(mul(v, v)); }, x), 1e-7);
}

TEST(GradCheck, LinearIsExact) {
  Rng rng(2);
  const Tensor x = random_tensor(rng, {6}, -2, 2);
  const Tensor w = Tensor({6}, {1, -2, 0.5, 4, -1, 0.25});
  EXPECT_LT(grad_check([&](const Tensor& v) { return sum(mul(v, w)); }, x), 1e-10);
}

TEST(Determinism, RepeatedOpSequenceIsBitIdentical) {
  auto run = [] {
    Rng rng(99);
    const Tensor x = random_tensor(rng, {2, 1, 6, 6});
    const Tensor k = random_tensor(rng, {3, 1, 3, 3});
    const Tensor y = log_softmax(flatten(max_pool2d(relu(conv2d(x, k, {1, 1})), 2)), 1);
    return to_vector(y);
  };
  EXPECT_EQ(run(), run());
}

TEST(Finiteness, ForwardAndBackwardStayFinite) {
  Rng rng(13);
  Tensor x = random_tensor(rng, {4, 6}, -1e3, 1e3, true);
  const Tensor w = random_tensor(rng, {6, 5}, -1, 1);
  const Tensor loss = sum(log_softmax(relu(matmul(x, w)), 1));
  EXPECT_TRUE(std::isfinite(loss.item()));
  backward(loss);
  for (double g : x.grad()) EXPECT_TRUE(std::isfinite(g));
}
