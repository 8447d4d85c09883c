#include <gtest/gtest.h>

#include <quadmath.h>

#include <cmath>
#include <random>

#include "cil/autodiff.hpp"
#include "cil/errors.hpp"
#include "cil/gradcheck.hpp"

namespace cil {
namespace {

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(r * c);
  for (auto& x : v) x = n(rng);
  return Tensor::matrix(r, c, std::move(v));
}

TEST(Elementwise, Relu) {
  Tape tape;
  Var y = elementwise(UnaryOp::relu, tape.leaf(Tensor::matrix(1, 3, {-1, 0, 2})));
  EXPECT_EQ(std::vector<double>(y.value().data().begin(), y.value().data().end()), (std::vector<double>{0, 0, 2}));
}

TEST(Elementwise, SigmoidSymmetryPoint) {
  Tape tape;
  EXPECT_DOUBLE_EQ(sigmoid(tape.leaf(Tensor::scalar(0.0))).value().item(), 0.5);
}

TEST(Elementwise, Square) {
  Tape tape;
  Var y = elementwise(UnaryOp::square, tape.leaf(Tensor::matrix(1, 2, {3, -2})));
  EXPECT_DOUBLE_EQ(y.value()[0], 9.0);
  EXPECT_DOUBLE_EQ(y.value()[1], 4.0);
}

TEST(Elementwise, BinaryShapeMismatch) {
  Tape tape;
  Var a = tape.leaf(Tensor::zeros({2, 2}));
  Var b = tape.leaf(Tensor::zeros({2, 3}));
  EXPECT_THROW(elementwise(BinaryOp::add, a, b), DimensionError);
  EXPECT_THROW(mul(a, b), DimensionError);
}

TEST(Elementwise, BinaryValues) {
  Tape tape;
  Var a = tape.leaf(Tensor::matrix(1, 2, {1, 2}));
  Var b = tape.leaf(Tensor::matrix(1, 2, {3, 5}));
  EXPECT_DOUBLE_EQ(elementwise(BinaryOp::add, a, b).value()[1], 7.0);
  EXPECT_DOUBLE_EQ(elementwise(BinaryOp::sub, a, b).value()[1], -3.0);
  EXPECT_DOUBLE_EQ(elementwise(BinaryOp::mul, a, b).value()[1], 10.0);
}

TEST(LossBce, HalfProbability) {
  Tape tape;
  EXPECT_NEAR(loss_bce(tape.leaf(Tensor::scalar(0.0)), Tensor::scalar(1.0)).value().item(), std::log(2.0), 1e-15);
}

TEST(LossBce, SaturatedCorrect) {
  Tape tape;
  EXPECT_LT(loss_bce(tape.leaf(Tensor::scalar(50.0)), Tensor::scalar(1.0)).value().item(), 1e-9);
}

TEST(LossBce, MatchesQuadPrecision) {
  Tape tape;
  const double got = loss_bce(tape.leaf(Tensor::column({-3.0, 2.0})), Tensor::column({0.0, 1.0})).value().item();
  // −log(1 − σ(−3)) = log(1 + e^{−3}); −log σ(2) = log(1 + e^{−2})
  const __float128 ref = (log1pq(expq(-3.0Q)) + log1pq(expq(-2.0Q))) / 2.0Q;
  EXPECT_NEAR(got, static_cast<double>(ref), 1e-10);
}

TEST(LossBce, RejectsNonBinaryLabel) {
  Tape tape;
  EXPECT_THROW(loss_bce(tape.leaf(Tensor::scalar(0.0)), Tensor::scalar(0.5)), ValidationError);
}

TEST(LossBce, NonNegativeAndStableForLargeLogits) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    Tape tape;
    Tensor z = random_tensor(8, 1, rng, 200.0);
    std::vector<double> y(8);
    for (auto& v : y) v = static_cast<double>(rng() % 2);
    const double loss = loss_bce(tape.leaf(z), Tensor::column(y)).value().item();
    EXPECT_GE(loss, 0.0);
    EXPECT_TRUE(std::isfinite(loss));
  }
}

TEST(LossMse, Examples) {
  Tape tape;
  Var p = tape.leaf(Tensor::matrix(1, 2, {1, 1}));
  EXPECT_DOUBLE_EQ(loss_mse(p, tape.constant(Tensor::matrix(1, 2, {0, 0}))).value().item(), 2.0);
  EXPECT_DOUBLE_EQ(loss_mse(p, p).value().item(), 0.0);
  EXPECT_THROW(loss_mse(p, tape.constant(Tensor::zeros({2, 1}))), DimensionError);
}

TEST(LossMse, MatchesDoubleLoop) {
  std::mt19937_64 rng(9);
  Tensor a = random_tensor(5, 3, rng), b = random_tensor(5, 3, rng);
  double ref = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) ref += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  Tape tape;
  EXPECT_NEAR(loss_mse(tape.leaf(a), tape.leaf(b)).value().item(), ref / 5.0, 1e-12);
}

TEST(LossSoftmax, UniformLogits) {
  Tape tape;
  std::vector<std::uint32_t> y{2};
  EXPECT_NEAR(loss_softmax_ce(tape.leaf(Tensor::matrix(1, 3, {0, 0, 0})), y).value().item(), std::log(3.0), 1e-15);
}

TEST(Backward, SumOfSquares) {
  Tape tape;
  Var x = tape.leaf(Tensor::matrix(1, 3, {1, 2, 3}));
  tape.backward(sum(square(x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 6.0);
}

TEST(Backward, SigmoidAtZeroWeights) {
  Tape tape;
  Var w = tape.leaf(Tensor::matrix(1, 3, {0, 0, 0}));
  Tensor xv = Tensor::matrix(3, 1, {1.5, -2.0, 0.5});
  tape.backward(sigmoid(matmul(w, tape.constant(xv))));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(w.grad()[i], 0.25 * xv[i]);
}

TEST(Backward, NonScalarRootIsContractError) {
  Tape tape;
  Var x = tape.leaf(Tensor::zeros({2, 1}));
  EXPECT_THROW(tape.backward(square(x)), ContractError);
}

TEST(Backward, AdjointShapesMatchValues) {
  Tape tape;
  Var x = tape.leaf(Tensor::zeros({3, 2}));
  Var w = tape.leaf(Tensor::filled({2, 4}, 0.1));
  tape.backward(mean(relu(matmul(x, w))));
  for (std::size_t i = 0; i < tape.size(); ++i) {
    if (tape.requires_grad(i)) EXPECT_EQ(tape.grad(i).shape(), tape.value(i).shape());
    for (auto p : tape.node(i).parents) EXPECT_LT(p, i);
  }
}

TEST(Backward, IndependentSubgraphsConcatenate) {
  std::mt19937_64 rng(21);
  Tensor a0 = random_tensor(2, 3, rng), b0 = random_tensor(3, 1, rng);
  auto f = [](Var v) { return sum(square(sigmoid(v))); };
  Tape joint;
  Var a = joint.leaf(a0), b = joint.leaf(b0);
  joint.backward(add(f(a), f(b)));
  Tape ta, tb;
  Var a1 = ta.leaf(a0), b1 = tb.leaf(b0);
  ta.backward(f(a1));
  tb.backward(f(b1));
  EXPECT_EQ(max_abs_diff(a.grad(), a1.grad()), 0.0);
  EXPECT_EQ(max_abs_diff(b.grad(), b1.grad()), 0.0);
}

TEST(GradCheck, LinearFunctionIsExact) {
  Tensor c = Tensor::matrix(1, 4, {0.5, -1.0, 2.0, 3.0});
  ScalarFn fn = [&](Tape& t, Var x) { return sum(mul(x, t.constant(c))); };
  EXPECT_LT(check_gradients(fn, Tensor::matrix(1, 4, {0.25, -0.5, 0.125, 0.75}), 1e-5), 1e-10);
}

TEST(GradCheck, ConstantFunction) {
  ScalarFn fn = [](Tape& t, Var) { return t.constant(Tensor::scalar(7.0)); };
  EXPECT_EQ(check_gradients(fn, Tensor::matrix(1, 3, {1, 2, 3}), 1e-5), 0.0);
}

TEST(GradCheck, RejectsNonPositiveStep) {
  ScalarFn fn = [](Tape&, Var x) { return sum(x); };
  EXPECT_THROW(check_gradients(fn, Tensor::scalar(1.0), 0.0), ValidationError);
}

TEST(GradCheck, BceThroughTwoLayerMlp) {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor(6, 4, rng);
  Tensor y = Tensor::column({0, 1, 1, 0, 1, 0});
  for (int rep = 0; rep < 20; ++rep) {
    Tensor w1 = random_tensor(4, 5, rng), b1 = random_tensor(1, 5, rng);
    Tensor w2 = random_tensor(5, 1, rng), b2 = random_tensor(1, 1, rng);
    auto net = [&](Tape& t, Var vw1, Var vb1, Var vw2, Var vb2) {
      Var h = relu(add_row(matmul(t.constant(x), vw1), vb1));
      return loss_bce(add_row(matmul(h, vw2), vb2), y);
    };
    ScalarFn first = [&](Tape& t, Var p) { return net(t, p, t.constant(b1), t.constant(w2), t.constant(b2)); };
    ScalarFn second = [&](Tape& t, Var p) { return net(t, t.constant(w1), t.constant(b1), p, t.constant(b2)); };
    ScalarFn bias = [&](Tape& t, Var p) { return net(t, t.constant(w1), p, t.constant(w2), t.constant(b2)); };
    EXPECT_LT(check_gradients(first, w1), 1e-4);
    EXPECT_LT(check_gradients(second, w2), 1e-4);
    EXPECT_LT(check_gradients(bias, b1), 1e-4);
  }
}

// Every differentiable primitive against central differences at 100 random points.
class PrimitiveGrad : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGrad, MatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  Tensor c = random_tensor(3, 4, rng);
  Tensor wmat = random_tensor(4, 2, rng);
  std::vector<std::size_t> rows{2, 0, 2};
  std::vector<std::uint32_t> classes{0, 3, 1};
  ScalarFn fns[] = {
      [&](Tape& t, Var x) { return sum(mul(matmul(x, t.constant(wmat)), matmul(x, t.constant(wmat)))); },
      [&](Tape& t, Var x) { return sum(mul(add(x, t.constant(c)), t.constant(c))); },
      [&](Tape& t, Var x) { return sum(mul(sub(t.constant(c), x), t.constant(c))); },
      [&](Tape& t, Var x) { return sum(mul(x, square(x))); },
      [&](Tape& t, Var x) { return sum(mul(relu(x), t.constant(c))); },
      [&](Tape& t, Var x) { return sum(mul(sigmoid(x), t.constant(c))); },
      [&](Tape& t, Var x) { return mean(mul(scale(x, -1.7), t.constant(c))); },
      [&](Tape& t, Var x) { return sum(square(add_row(t.constant(c), select_rows(x, std::vector<std::size_t>{1})))); },
      [&](Tape& t, Var x) { return sum(square(select_rows(x, rows))); },
      [&](Tape& t, Var x) { return sum(square(concat_cols(x, mul(x, t.constant(c))))); },
      [&](Tape&, Var x) {
        Var s = mean(x);
        return sum(square(sub(x, broadcast(s, 3, 4))));
      },
      [&](Tape&, Var x) {
        std::vector<Var> parts{sum(x), mean(square(x))};
        return sum(square(stack(parts)));
      },
      [&](Tape& t, Var x) { return loss_bce(matmul(x, t.constant(Tensor::column({0.3, -1.0, 0.7, 2.0}))), Tensor::column({1, 0, 1})); },
      [&](Tape&, Var x) { return loss_softmax_ce(x, classes); },
      [&](Tape& t, Var x) { return loss_mse(x, t.constant(c)); },
  };
  for (auto& fn : fns) {
    for (int point = 0; point < 25; ++point) {
      EXPECT_LT(check_gradients(fn, random_tensor(3, 4, rng), 1e-5), 1e-4);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGrad, ::testing::Values(0, 1, 2, 3));

}  // namespace
}  // namespace cil
