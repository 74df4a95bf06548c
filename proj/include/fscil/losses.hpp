// SPDX-License-Identifier: Apache-2.0
//
// Cosine prototypical prediction, cross-entropy, proxy anchoring and the
// balance-weighted relation disentanglement loss. Each loss has a graph
// builder (used for training) and a value-only entry point.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fscil/autodiff.hpp"
#include "fscil/error.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

/// Lower clamp applied to probabilities before taking the log.
inline constexpr double kProbabilityFloor = 1e-300;

/// n x m matrix of cosine similarities between embeddings and heads. These are
/// the logits of the classifier (no temperature).
inline Var cosine_logits(Var embeddings, Var heads) {
  return cosine(embeddings, heads, CosinePairing::AllPairs);
}

/// Row-wise softmax over cosine similarities.
inline Tensor predict(const Tensor& embeddings, const Tensor& heads) {
  Graph g;
  Tensor logits = cosine_logits(g.constant(embeddings.detached()), g.constant(heads.detached()))
                      .value()
                      .detached();
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
  return logits;
}

inline void check_labels(std::span<const int> labels, std::size_t rows, std::size_t classes) {
  if (labels.size() != rows) {
    throw DimensionError(std::to_string(labels.size()) + " labels for " + std::to_string(rows) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw DimensionError("label " + std::to_string(y) + " outside " + std::to_string(classes) + " classes");
    }
  }
}

/// Mean negative log-likelihood of the true labels under `probs`.
inline double loss_ce(const Tensor& probs, std::span<const int> labels) {
  check_labels(labels, probs.rows(), probs.cols());
  if (probs.rows() == 0) throw DimensionError("cross-entropy of an empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    total -= std::log(std::max(probs(i, static_cast<std::size_t>(labels[i])), kProbabilityFloor));
  }
  return total / static_cast<double>(probs.rows());
}

/// Fused softmax + cross-entropy over cosine logits.
inline Var loss_ce(Var logits, std::span<const int> labels) {
  return softmax_cross_entropy(logits, labels);
}

/// Sum over classes of the (unsquared) L2 distance between classifier row
/// w_c and orthogonal proxy c.
inline Var loss_ac(Var classifier, Var ortho) {
  if (!same_shape(classifier.value(), ortho.value())) {
    throw DimensionError("anchoring loss: classifier " + shape_string(classifier.value()) +
                         " vs proxies " + shape_string(ortho.value()));
  }
  return sum_all(row_norm(sub(classifier, ortho)));
}

inline double loss_ac(const Tensor& classifier, const Tensor& ortho) {
  Graph g;
  return scalar(loss_ac(g.constant(classifier.detached()), g.constant(ortho.detached())));
}

inline Var total_base_loss(Var ce, Var ac, double lambda_ac) {
  if (lambda_ac < 0.0) throw Error("lambda_ac must be non-negative");
  if (lambda_ac == 0.0) return ce;
  return add(ce, scale(ac, lambda_ac));
}

inline double total_base_loss(double ce, double ac, double lambda_ac) {
  if (lambda_ac < 0.0) throw Error("lambda_ac must be non-negative");
  return ce + lambda_ac * ac;
}

/// gamma_n = (rows in the batch sharing row n's label) / batch size.
/// With `enabled` false every row gets 1 / batch size.
inline std::vector<double> balance_weights(std::span<const int> labels, bool enabled = true) {
  if (labels.empty()) throw DimensionError("balance weights of an empty batch");
  const double n = static_cast<double>(labels.size());
  std::vector<double> gamma(labels.size(), 1.0 / n);
  if (!enabled) return gamma;
  std::map<int, std::size_t> counts;
  for (int y : labels) ++counts[y];
  for (std::size_t i = 0; i < labels.size(); ++i) gamma[i] = static_cast<double>(counts[labels[i]]) / n;
  return gamma;
}

enum class RowOrigin { ReplayedMean, FreshSample };

struct LabeledBatch {
  Tensor embeddings;           // n x d'
  std::vector<int> labels;     // global class ids
  std::vector<RowOrigin> origin;
};

/// One-hot selectors S_base (n x |C0|) and S_novel (n x rows(beta)) such that
/// S_base * classifier + S_novel * beta stacks each row's target.
inline std::pair<Tensor, Tensor> rd_selectors(std::span<const int> labels, std::size_t base_count,
                                              std::size_t beta_rows) {
  Tensor base(labels.size(), base_count);
  Tensor novel(labels.size(), beta_rows);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0) throw ProtocolError("negative class label " + std::to_string(y));
    const auto uy = static_cast<std::size_t>(y);
    if (uy < base_count) {
      base(i, uy) = 1.0;
    } else if (uy - base_count < beta_rows) {
      novel(i, uy - base_count) = 1.0;
    } else {
      throw ProtocolError("class " + std::to_string(y) + " has no assigned disentanglement proxy");
    }
  }
  return {std::move(base), std::move(novel)};
}

/// sum_n gamma_n * (1 - cos(e_n, target_n)), computed as
/// sum(gamma) - gamma^T cos so that the weights stay a constant matmul operand.
/// Targets are gathered with selector matmuls, so the classifier (and beta)
/// receive gradients only if they are graph parameters.
inline Var loss_rd(Var embeddings, std::span<const int> labels, Var classifier, Var beta,
                   std::size_t base_count, bool balance = true) {
  Graph& g = same_graph(embeddings, classifier);
  if (labels.size() != embeddings.value().rows()) {
    throw DimensionError(std::to_string(labels.size()) + " labels for " +
                         std::to_string(embeddings.value().rows()) + " embeddings");
  }
  if (classifier.value().rows() != base_count) {
    throw DimensionError("classifier has " + std::to_string(classifier.value().rows()) +
                         " rows, expected " + std::to_string(base_count));
  }
  const std::vector<double> gamma = balance_weights(labels, balance);
  auto [sel_base, sel_novel] = rd_selectors(labels, base_count, beta.value().rows());
  Var targets = matmul(g.constant(std::move(sel_base)), classifier);
  if (beta.value().rows() > 0) {
    targets = add(targets, matmul(g.constant(std::move(sel_novel)), beta));
  }
  Var cos = cosine(embeddings, targets, CosinePairing::RowWise);
  Var weighted = matmul(g.constant(Tensor::row_vector(gamma)), cos);
  double gamma_sum = 0.0;
  for (double w : gamma) gamma_sum += w;
  return add(g.constant(Tensor(1, 1, gamma_sum)), scale(weighted, -1.0));
}

inline double loss_rd(const LabeledBatch& batch, const Tensor& classifier, const Tensor& beta,
                      std::size_t base_count, bool balance = true) {
  Graph g;
  return scalar(loss_rd(g.constant(batch.embeddings.detached()), batch.labels,
                        g.constant(classifier.detached()), g.constant(beta.detached()), base_count,
                        balance));
}

}  // namespace fscil
