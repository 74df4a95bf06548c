// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "fscil/autodiff.hpp"
#include "fscil/gradcheck.hpp"
#include "fscil/gradsuite.hpp"
#include "oracle.hpp"

using namespace fscil;

namespace {

// Reduces any matrix node to a scalar with fixed random weights so that every
// output entry contributes a distinct gradient.
GraphBuilder weighted(std::function<Var(Graph&, std::span<const Var>)> body, std::size_t rows,
                      std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor l = oracle::gaussian(rng, 1, rows), r = oracle::gaussian(rng, cols, 1);
  return [=](Graph& g, std::span<const Var> v) { return matmul(matmul(g.constant(l), body(g, v)), g.constant(r)); };
}

}  // namespace

TEST(Tensor, ShapeAndRowAccess) {
  Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t(1, 2), 6.0);
  EXPECT_EQ(t.row(1)[0], 4.0);
  EXPECT_THROW(Tensor(2, 2, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(Tensor::from_rows({{1, 2}, {3}}), DimensionError);
}

TEST(Tensor, GradAccumulatorFollowsFlag) {
  Tensor t(2, 2, 1.0);
  EXPECT_TRUE(t.grad().empty());
  t.set_requires_grad(true);
  ASSERT_EQ(t.grad().size(), 4u);
  for (double g : t.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Tensor, HelpersKeepValues) {
  Tensor a = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const std::vector<std::size_t> idx{2, 0};
  Tensor g = gather_rows(a, idx);
  EXPECT_TRUE(bitwise_equal(g, Tensor::from_rows({{5, 6}, {1, 2}})));
  EXPECT_TRUE(bitwise_equal(vconcat(a, Tensor()), a));
  EXPECT_TRUE(bitwise_equal(head_rows(a, 2), Tensor::from_rows({{1, 2}, {3, 4}})));
  EXPECT_THROW(head_rows(a, 4), DimensionError);
  EXPECT_THROW(vconcat(a, Tensor(1, 3)), DimensionError);
}

TEST(Autodiff, MatmulForwardAndShapeError) {
  Graph g;
  Var a = g.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  Var b = g.constant(Tensor::from_rows({{5}, {6}}));
  const Tensor& c = matmul(a, b).value();
  EXPECT_EQ(c(0, 0), 17.0);
  EXPECT_EQ(c(1, 0), 39.0);
  EXPECT_THROW(matmul(b, b), DimensionError);
}

TEST(Autodiff, MatmulGradient) {
  std::mt19937_64 rng(1);
  const std::vector<Tensor> params{oracle::gaussian(rng, 3, 4), oracle::gaussian(rng, 4, 2)};
  auto build = weighted([](Graph&, std::span<const Var> v) { return matmul(v[0], v[1]); }, 3, 2, 2);
  GradCheckOptions opt;
  opt.tol = 1e-6;
  EXPECT_TRUE(check_gradients(build, params, opt).passed);
}

TEST(Autodiff, AddBroadcastsRowAndChecksGradient) {
  Graph g;
  Var a = g.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  Var b = g.constant(Tensor::from_rows({{10, 20}}));
  EXPECT_TRUE(bitwise_equal(add(a, b).value(), Tensor::from_rows({{11, 22}, {13, 24}})));
  EXPECT_THROW(add(a, g.constant(Tensor(1, 3))), DimensionError);

  std::mt19937_64 rng(3);
  const std::vector<Tensor> params{oracle::gaussian(rng, 2, 3), oracle::gaussian(rng, 2, 3)};
  auto build = weighted([](Graph&, std::span<const Var> v) { return add(v[0], v[1]); }, 2, 3, 4);
  GradCheckOptions opt;
  opt.tol = 1e-6;
  EXPECT_TRUE(check_gradients(build, params, opt).passed);
}

TEST(Autodiff, ReluSubgradientAtZeroIsZero) {
  Graph g;
  Var x = g.parameter(Tensor::from_rows({{-1.0, 0.0, 2.0}}));
  Var loss = sum_all(relu(x));
  g.backward(loss);
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Autodiff, CosineValuesMatchOracle) {
  std::mt19937_64 rng(5);
  Tensor a = oracle::gaussian(rng, 3, 4), b = oracle::gaussian(rng, 5, 4);
  Graph g;
  const Tensor& all = cosine(g.constant(a), g.constant(b), CosinePairing::AllPairs).value();
  const auto am = oracle::to_matrix(a), bm = oracle::to_matrix(b);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(all(i, j), oracle::cos(am[i], bm[j]), 1e-14);
  }
  const Tensor& self = cosine(g.constant(a), g.constant(a), CosinePairing::AllPairsOffDiagonal).value();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(self(i, i), 0.0);
  Tensor c = oracle::gaussian(rng, 3, 4);
  const Tensor& rows = cosine(g.constant(a), g.constant(c)).value();
  ASSERT_EQ(rows.cols(), 1u);
  const auto cm = oracle::to_matrix(c);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(rows(i, 0), oracle::cos(am[i], cm[i]), 1e-14);
}

TEST(Autodiff, CosineOfZeroRowIsDegenerate) {
  Graph g;
  Var a = g.constant(Tensor(1, 3));
  Var b = g.constant(Tensor::from_rows({{1, 0, 0}}));
  EXPECT_THROW(cosine(a, b), DegenerateInputError);
}

TEST(Autodiff, SoftmaxCrossEntropyValue) {
  Graph g;
  Var z = g.constant(Tensor::from_rows({{0.0, 0.0}, {1.0, 0.0}}));
  const std::vector<int> y{0, 0};
  const double expected = 0.5 * (std::log(2.0) + std::log(1.0 + std::exp(-1.0)));
  EXPECT_NEAR(scalar(softmax_cross_entropy(z, y)), expected, 1e-15);
  const std::vector<int> bad{0, 2};
  EXPECT_THROW(softmax_cross_entropy(z, bad), DimensionError);
}

TEST(Autodiff, BackwardRulesAndErrors) {
  Graph g;
  Var x = g.parameter(Tensor(2, 2, 1.0));
  EXPECT_THROW(g.backward(x), DimensionError);
  Var loss = sum_all(x);
  g.backward(loss);
  EXPECT_THROW(g.backward(loss), GraphError);
  g.reset_grads();
  EXPECT_NO_THROW(g.backward(loss));
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);

  Graph other;
  Var y = other.constant(Tensor(2, 2));
  EXPECT_THROW(add(x, y), GraphError);
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Graph g;
  Var c = g.constant(Tensor(1, 2, 3.0));
  Var p = g.parameter(Tensor(1, 2, 1.0));
  g.backward(sum_all(add(c, p)));
  EXPECT_TRUE(c.grad().empty());
  EXPECT_EQ(p.grad().size(), 2u);
}

TEST(Autodiff, NonFiniteLeafIsRejected) {
  Graph g;
  EXPECT_THROW(g.constant(Tensor(1, 1, std::numeric_limits<double>::quiet_NaN())), NumericError);
}

TEST(Autodiff, VstackAndSumAll) {
  Graph g;
  Var a = g.parameter(Tensor::from_rows({{1, 2}}));
  Var b = g.parameter(Tensor::from_rows({{3, 4}, {5, 6}}));
  Var s = vstack(a, b);
  EXPECT_TRUE(bitwise_equal(s.value(), Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}})));
  EXPECT_EQ(scalar(sum_all(s)), 21.0);
}

TEST(GradCheck, EveryOperatorPassesOnRandomInstances) {
  for (const auto& e : run_gradient_suite()) {
    EXPECT_TRUE(e.passed) << e.name << " max rel err " << e.max_rel_error;
    EXPECT_GE(e.instances, 20u) << e.name;
  }
}

TEST(GradCheck, InjectedFaultIsDetected) {
  for (OpKind k : {OpKind::MatMul, OpKind::Cosine, OpKind::SoftmaxCrossEntropy, OpKind::RowNorm}) {
    GradSuiteOptions opt;
    opt.instances = 5;
    opt.check.inject_fault = k;
    bool any_failed = false;
    for (const auto& e : run_gradient_suite(opt)) {
      if (e.name == op_name(k)) {
        EXPECT_FALSE(e.passed) << e.name;
      }
      any_failed = any_failed || !e.passed;
    }
    EXPECT_TRUE(any_failed);
  }
}
