// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "fscil/losses.hpp"
#include "fscil/proxies.hpp"
#include "oracle.hpp"

using namespace fscil;

constexpr double kOracleTol = 1e-12;

TEST(Losses, CrossEntropyMatchesOracle) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = oracle::draw(rng, 1, 32), m = oracle::draw(rng, 2, 16), d = oracle::draw(rng, 2, 12);
    const Tensor e = oracle::gaussian(rng, n, d), w = oracle::gaussian(rng, m, d);
    const auto y = oracle::labels(rng, n, m);
    Graph g;
    const double got = scalar(loss_ce(cosine_logits(g.constant(e), g.constant(w)), y));
    const double want = oracle::ce(oracle::to_matrix(e), oracle::to_matrix(w), y);
    EXPECT_NEAR(got, want, kOracleTol);
    EXPECT_NEAR(loss_ce(predict(e, w), y), want, kOracleTol);
  }
}

TEST(Losses, AnchoringMatchesOracle) {
  std::mt19937_64 rng(102);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = oracle::draw(rng, 1, 16), d = oracle::draw(rng, 1, 12);
    const Tensor w = oracle::gaussian(rng, c, d), s = oracle::gaussian(rng, c, d);
    EXPECT_NEAR(loss_ac(w, s), oracle::ac(oracle::to_matrix(w), oracle::to_matrix(s)), kOracleTol);
  }
}

TEST(Losses, AnchoringKnownValueAndShapeCheck) {
  const Tensor w = Tensor::from_rows({{3, 4}, {1, 0}});
  const Tensor s = Tensor::from_rows({{0, 0}, {1, 0}});
  EXPECT_DOUBLE_EQ(loss_ac(w, s), 5.0);
  EXPECT_THROW(loss_ac(w, Tensor(3, 2)), DimensionError);
}

TEST(Losses, DisentanglementMatchesOracle) {
  std::mt19937_64 rng(103);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = oracle::draw(rng, 0, 16), nd = oracle::draw(rng, 1, 16), d = oracle::draw(rng, 2, 12);
    const Tensor s = oracle::gaussian(rng, c, d), b = oracle::gaussian(rng, nd, d);
    const auto sm = oracle::to_matrix(s), bm = oracle::to_matrix(b);
    EXPECT_NEAR(eval_L_db(s, b), oracle::db(sm, bm), kOracleTol);
    for (DbTerms t : {DbTerms{true, false}, DbTerms{false, true}}) {
      Graph g;
      EXPECT_NEAR(scalar(db_loss(g.constant(s), g.constant(b), t)), oracle::db(sm, bm, t.base_novel, t.novel_novel),
                  kOracleTol);
    }
  }
}

TEST(Losses, RelationDisentanglementMatchesOracle) {
  std::mt19937_64 rng(104);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = oracle::draw(rng, 1, 8), nd = oracle::draw(rng, 0, 8), n = oracle::draw(rng, 1, 32);
    const std::size_t d = oracle::draw(rng, 2, 12);
    const Tensor e = oracle::gaussian(rng, n, d), w = oracle::gaussian(rng, c, d), b = oracle::gaussian(rng, nd, d);
    const auto y = oracle::labels(rng, n, c + nd);
    const bool balance = trial % 2 == 0;
    LabeledBatch batch{e, y, {}};
    EXPECT_NEAR(loss_rd(batch, w, b, c, balance),
                oracle::rd(oracle::to_matrix(e), y, oracle::to_matrix(w), oracle::to_matrix(b), balance), kOracleTol);
  }
}

TEST(Losses, PredictMatchesOracle) {
  std::mt19937_64 rng(105);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = oracle::draw(rng, 1, 32), m = oracle::draw(rng, 1, 16), d = oracle::draw(rng, 2, 12);
    const Tensor e = oracle::gaussian(rng, n, d), h = oracle::gaussian(rng, m, d);
    const Tensor p = predict(e, h);
    const auto want = oracle::predict(oracle::to_matrix(e), oracle::to_matrix(h));
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < m; ++j) {
        EXPECT_NEAR(p(i, j), want[i][j], kOracleTol);
        sum += p(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Losses, PredictIsScaleInvariant) {
  const Tensor e = Tensor::from_rows({{1, 2, 3}});
  const Tensor e3 = Tensor::from_rows({{3, 6, 9}});
  const Tensor h = Tensor::from_rows({{1, 0, 0}, {0, 1, 1}});
  const Tensor a = predict(e, h), b = predict(e3, h);
  for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(a(0, j), b(0, j), 1e-15);
}

TEST(Losses, CrossEntropyLabelErrors) {
  const Tensor p(2, 3, 1.0 / 3.0);
  const std::vector<int> short_y{0};
  const std::vector<int> out_of_range{0, 3};
  EXPECT_THROW(loss_ce(p, short_y), DimensionError);
  EXPECT_THROW(loss_ce(p, out_of_range), DimensionError);
}

TEST(Losses, CrossEntropyLogIsClamped) {
  const Tensor p = Tensor::from_rows({{1.0, 0.0}});
  const std::vector<int> y{1};
  EXPECT_NEAR(loss_ce(p, y), -std::log(kProbabilityFloor), 1e-9);
}

TEST(BalanceWeights, EqualCountsOverBatchSize) {
  const std::vector<int> y{3, 1, 3, 3, 7, 1};
  const auto g = balance_weights(y);
  const std::vector<double> want{0.5, 2.0 / 6, 0.5, 0.5, 1.0 / 6, 2.0 / 6};
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(g[i], want[i]);
  for (double v : balance_weights(y, false)) EXPECT_DOUBLE_EQ(v, 1.0 / 6);
  EXPECT_THROW(balance_weights(std::vector<int>{}), DimensionError);
}

TEST(BalanceWeights, TimesBatchSizeIsIntegerCount) {
  // Exact for power-of-two batch sizes; otherwise count / n is rounded and the
  // product can land one ulp off (1/49 * 49 < 1).
  std::mt19937_64 rng(106);
  for (int trial = 0; trial < 200; ++trial) {
    const bool pow2 = trial % 2 == 0;
    const std::size_t n = pow2 ? std::size_t{1} << oracle::draw(rng, 0, 7) : oracle::draw(rng, 1, 100);
    const auto y = oracle::labels(rng, n, oracle::draw(rng, 1, 20));
    std::map<int, std::size_t> counts;
    for (int v : y) ++counts[v];
    const auto g = balance_weights(y);
    for (std::size_t i = 0; i < n; ++i) {
      const double want = static_cast<double>(counts[y[i]]);
      if (pow2) {
        EXPECT_EQ(g[i] * static_cast<double>(n), want);
      } else {
        EXPECT_NEAR(g[i] * static_cast<double>(n), want, 4e-16 * want);
      }
    }
  }
}

TEST(Losses, RelationSelectorsRejectUnassignedClass) {
  const std::vector<int> y{0, 5};
  EXPECT_THROW(rd_selectors(y, 2, 3), ProtocolError);
  const std::vector<int> neg{-1};
  EXPECT_THROW(rd_selectors(neg, 2, 3), ProtocolError);
}

TEST(Losses, RelationLossIsZeroOnTargets) {
  const Tensor w = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}});
  const Tensor b = Tensor::from_rows({{0, 0, 1}});
  LabeledBatch batch{Tensor::from_rows({{2, 0, 0}, {0, 0, 5}, {0, 3, 0}}), {0, 2, 1}, {}};
  EXPECT_NEAR(loss_rd(batch, w, b, 2), 0.0, 1e-15);
}

TEST(Losses, TotalBaseLoss) {
  EXPECT_DOUBLE_EQ(total_base_loss(1.5, 2.0, 0.25), 2.0);
  EXPECT_THROW(total_base_loss(1.0, 1.0, -1.0), Error);
}
