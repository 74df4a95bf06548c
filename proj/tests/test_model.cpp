// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "fscil/gradcheck.hpp"
#include "fscil/losses.hpp"
#include "fscil/model.hpp"
#include "oracle.hpp"

using namespace fscil;

namespace {

Dims small_dims() {
  Dims d;
  d.input_dim = 5;
  d.backbone_hidden = 7;
  d.backbone_hidden_layers = 2;
  d.backbone_out = 6;
  d.controller_hidden = 9;
  d.controller_out = 4;
  d.base_classes = 3;
  return d;
}

}  // namespace

TEST(Model, InitRespectsFanBoundAndShapes) {
  const ModelParams p = init_params(small_dims(), 11);
  ASSERT_EQ(p.backbone.size(), 3u);
  EXPECT_EQ(p.backbone[0].weight.rows(), 5u);
  EXPECT_EQ(p.backbone[2].weight.cols(), 6u);
  EXPECT_EQ(p.controller[1].weight.cols(), 4u);
  EXPECT_EQ(p.classifier.rows(), 3u);
  EXPECT_EQ(p.classifier.cols(), 4u);
  auto check = [](const Tensor& w, std::size_t fan_in, std::size_t fan_out) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double v : w.data()) EXPECT_LE(std::abs(v), bound);
  };
  for (const Linear& l : p.backbone) {
    check(l.weight, l.weight.rows(), l.weight.cols());
    for (double b : l.bias.data()) EXPECT_EQ(b, 0.0);
  }
  for (const Linear& l : p.controller) check(l.weight, l.weight.rows(), l.weight.cols());
  check(p.classifier, 4, 3);
}

TEST(Model, InitIsSeedDeterministic) {
  ModelParams a = init_params(small_dims(), 3), b = init_params(small_dims(), 3), c = init_params(small_dims(), 4);
  auto la = parameter_list(a), lb = parameter_list(b), lc = parameter_list(c);
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_TRUE(bitwise_equal(*la[i], *lb[i]));
  EXPECT_FALSE(bitwise_equal(*la[0], *lc[0]));
}

TEST(Model, ZeroDimensionIsRejected) {
  Dims d = small_dims();
  d.controller_out = 0;
  EXPECT_THROW(init_params(d, 1), DimensionError);
}

TEST(Model, IdentityBackbonePassesReluOfInput) {
  Dims d = small_dims();
  d.input_dim = 4;
  d.identity_backbone = true;
  const ModelParams p = init_params(d, 1);
  EXPECT_TRUE(p.backbone.empty());
  EXPECT_EQ(p.dims.backbone_out, 4u);
  const Tensor x = Tensor::from_rows({{1, 2, 3, 4}});
  EXPECT_TRUE(bitwise_equal(encode_backbone(x, p), x));
}

TEST(Model, SingleIdentityLayerIsRelu) {
  Dims d = small_dims();
  d.input_dim = 4;
  d.backbone_hidden_layers = 0;
  d.backbone_out = 4;
  ModelParams p = init_params(d, 1);
  p.backbone[0].weight = Tensor::identity(4);
  const Tensor x = Tensor::from_rows({{1, -2, 3, -4}});
  EXPECT_TRUE(bitwise_equal(encode_backbone(x, p), Tensor::from_rows({{1, 0, 3, 0}})));
}

TEST(Model, WrongInputWidthThrows) {
  const ModelParams p = init_params(small_dims(), 1);
  EXPECT_THROW(encode_backbone(Tensor(2, 4), p), DimensionError);
  EXPECT_THROW(encode_controller(Tensor(2, 5), p), DimensionError);
}

TEST(Model, GradientThroughTwoHiddenLayers) {
  ModelParams p = init_params(small_dims(), 5);
  std::mt19937_64 rng(6);
  for (Tensor* t : parameter_list(p)) {
    if (t->rows() == 1) {
      const Tensor b = oracle::gaussian(rng, 1, t->cols());
      std::copy(b.data().begin(), b.data().end(), t->data().begin());
    }
  }
  const Tensor x = oracle::gaussian(rng, 4, 5);
  const std::vector<int> y{0, 1, 2, 1};
  std::vector<Tensor> params;
  for (Tensor* t : parameter_list(p)) params.push_back(t->detached());
  auto build = [&](Graph& g, std::span<const Var> v) {
    BoundModel m;
    std::size_t k = 0;
    for (std::size_t i = 0; i < 3; ++i, k += 2) m.backbone.push_back({v[k], v[k + 1]});
    for (std::size_t i = 0; i < 2; ++i, k += 2) m.controller[i] = {v[k], v[k + 1]};
    m.classifier = v[k];
    return loss_ce(cosine_logits(encode_controller(encode_backbone(g.constant(x), m), m), m.classifier), y);
  };
  const auto r = check_gradients(build, params);
  EXPECT_TRUE(r.passed) << r.max_rel_error();
}

TEST(Model, FrozenPartsGetNoGradientAndStayBitIdentical) {
  ModelParams p = init_params(small_dims(), 8);
  p.frozen_backbone = true;
  const ModelParams before = p;
  std::mt19937_64 rng(9);
  const Tensor x = oracle::gaussian(rng, 6, 5);
  const std::vector<int> y{0, 1, 2, 0, 1, 2};
  Sgd sgd(0.1, 0.9);
  for (int step = 0; step < 3; ++step) {
    Graph g;
    BoundModel m = bind(g, p, {true, true, false});
    Var loss = loss_ce(cosine_logits(encode_controller(encode_backbone(g.constant(x), m), m), m.classifier), y);
    g.backward(loss);
    for (const BoundLinear& l : m.backbone) EXPECT_TRUE(l.weight.grad().empty());
    EXPECT_TRUE(m.classifier.grad().empty());
    sgd.step(parameter_list(p), parameter_list(m));
  }
  for (std::size_t i = 0; i < p.backbone.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(p.backbone[i].weight, before.backbone[i].weight));
    EXPECT_TRUE(bitwise_equal(p.backbone[i].bias, before.backbone[i].bias));
  }
  EXPECT_TRUE(bitwise_equal(p.classifier, before.classifier));
  EXPECT_FALSE(bitwise_equal(p.controller[0].weight, before.controller[0].weight));
}
