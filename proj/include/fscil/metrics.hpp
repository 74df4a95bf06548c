// SPDX-License-Identifier: Apache-2.0
//
// Session evaluation with integer tallies, run summaries, relation matrices
// between class embeddings and a deterministic 2-D projection of class means.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/protocol.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;

  std::optional<double> rate() const {
    if (total == 0) return std::nullopt;
    return static_cast<double>(correct) / static_cast<double>(total);
  }
  Tally& operator+=(const Tally& o) {
    correct += o.correct;
    total += o.total;
    return *this;
  }
  friend bool operator==(const Tally&, const Tally&) = default;
};

struct SessionReport {
  std::size_t session_id = 0;
  Tally overall;
  Tally base;
  Tally novel;
  std::map<int, Tally> per_class;
  double max_base_novel_cos = 0.0;   // over head rows
  double max_novel_novel_cos = 0.0;
  std::size_t degenerate = 0;        // rows excluded from every tally

  double accuracy() const { return overall.rate().value_or(0.0); }
  std::optional<double> base_accuracy() const { return base.rate(); }
  std::optional<double> novel_accuracy() const { return novel.rate(); }
};

struct RunReport {
  std::vector<SessionReport> sessions;
  double mean_accuracy = 0.0;
  double performance_drop = 0.0;    // acc(first session) - acc(last session)
};

inline RunReport make_run_report(std::vector<SessionReport> sessions) {
  if (sessions.empty()) throw MetricsError("run report without sessions");
  RunReport r;
  double sum = 0.0;
  for (const auto& s : sessions) sum += s.accuracy();
  r.mean_accuracy = sum / static_cast<double>(sessions.size());
  r.performance_drop = sessions.front().accuracy() - sessions.back().accuracy();
  r.sessions = std::move(sessions);
  return r;
}

/// Largest base-vs-novel and novel-vs-novel cosine among the head rows.
inline std::pair<double, double> head_correlation(const Tensor& head, std::size_t base_count) {
  double bn = 0.0;
  double nn = 0.0;
  for (std::size_t i = base_count; i < head.rows(); ++i) {
    for (std::size_t c = 0; c < base_count; ++c) bn = std::max(bn, cosine_value(head.row(i), head.row(c)));
    for (std::size_t j = base_count; j < i; ++j) nn = std::max(nn, cosine_value(head.row(i), head.row(j)));
  }
  return {bn, nn};
}

/// Tallies predictions against labels. Rows flagged degenerate are skipped.
inline SessionReport tally_predictions(std::span<const int> predicted, std::span<const int> truth,
                                       const std::vector<bool>& degenerate, std::size_t base_count) {
  if (predicted.size() != truth.size() || degenerate.size() != truth.size()) {
    throw DimensionError("prediction, label and flag counts differ");
  }
  SessionReport r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (degenerate[i]) {
      ++r.degenerate;
      continue;
    }
    const Tally t{predicted[i] == truth[i] ? 1u : 0u, 1u};
    r.overall += t;
    r.per_class[truth[i]] += t;
    (static_cast<std::size_t>(truth[i]) < base_count ? r.base : r.novel) += t;
  }
  return r;
}

/// Accuracy of `state` over the union of the test records of `seen`, which
/// must be the sessions completed so far (0..t).
inline SessionReport evaluate_session(const SessionState& state, std::span<const SessionDataset> seen) {
  if (seen.empty()) throw MetricsError("no test sessions supplied");
  std::vector<Record> records;
  std::set<int> test_classes;
  for (const auto& ds : seen) {
    for (const Record& r : ds.test) {
      records.push_back(r);
      test_classes.insert(r.label);
    }
  }
  if (records.empty()) throw MetricsError("empty test set");
  if (test_classes.size() != state.seen_classes() ||
      *test_classes.rbegin() >= static_cast<int>(state.seen_classes())) {
    throw MetricsError("test sets cover " + std::to_string(test_classes.size()) + " classes, model has seen " +
                       std::to_string(state.seen_classes()));
  }
  const Inference inf = infer(state, features_matrix(records));
  SessionReport r = tally_predictions(inf.labels, labels_of(records), inf.degenerate, state.base_count());
  r.session_id = seen.back().session_id;
  std::tie(r.max_base_novel_cos, r.max_novel_novel_cos) = head_correlation(state.head(), state.base_count());
  return r;
}

/// Controller-space embeddings of every stored class mean, ascending label.
inline Tensor class_embeddings(const SessionState& state) {
  if (state.replay.size() == 0) throw MetricsError("no completed session");
  return encode_controller(state.replay.matrix(), state.params);
}

/// Pairwise cosine matrix of rows, exactly symmetric with a unit diagonal.
inline Tensor cosine_matrix(const Tensor& rows) {
  const std::size_t m = rows.rows();
  Tensor out(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    out(i, i) = 1.0;
    for (std::size_t j = 0; j < i; ++j) {
      const double c = std::clamp(cosine_value(rows.row(i), rows.row(j)), -1.0, 1.0);
      out(i, j) = c;
      out(j, i) = c;
    }
  }
  return out;
}

inline Tensor relation_matrix(const SessionState& state) { return cosine_matrix(class_embeddings(state)); }

/// Mean |r_ij| over pairs with i a base class and j a novel class.
inline double mean_abs_base_novel(const Tensor& relations, std::size_t base_count) {
  if (relations.rows() <= base_count) throw MetricsError("relation matrix has no novel classes");
  double sum = 0.0;
  for (std::size_t i = 0; i < base_count; ++i) {
    for (std::size_t j = base_count; j < relations.cols(); ++j) sum += std::abs(relations(i, j));
  }
  return sum / static_cast<double>(base_count * (relations.cols() - base_count));
}

/// Mean off-diagonal entry; a lower value means more spread-out classes.
inline double mean_pairwise_cosine(const Tensor& relations) {
  const std::size_t m = relations.rows();
  if (m < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) sum += relations(i, j);
    }
  }
  return sum / static_cast<double>(m * (m - 1));
}

struct Eigen2 {
  std::vector<double> values;  // descending
  Tensor vectors;              // column k pairs with values[k]
};

/// Cyclic Jacobi rotations for a small dense symmetric matrix.
inline Eigen2 symmetric_eigen(Tensor a, std::size_t max_sweeps = 100) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionError("eigen decomposition of non-square " + shape_string(a));
  Tensor v = Tensor::identity(n);
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    double diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      diag += a(i, i) * a(i, i);
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    }
    if (off <= 1e-30 * diag || off == 0.0) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = std::copysign(1.0, theta) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  Eigen2 out{std::vector<double>(n), Tensor(n, n)};
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

/// Relative size of the second principal variance below which the point set
/// counts as rank-deficient.
inline constexpr double kProjectionRankTolerance = 1e-10;

/// Coordinates of each row on the top-2 principal directions of the centered
/// rows. Each direction's largest-magnitude loading is made positive.
inline Tensor project_2d(const Tensor& points) {
  const std::size_t m = points.rows();
  const std::size_t d = points.cols();
  if (m < 3) throw ProjectionError("projection needs at least 3 classes, got " + std::to_string(m));
  Tensor x = points.detached();
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += x(i, j);
    mean /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) x(i, j) -= mean;
  }
  // The m x m Gram matrix shares its nonzero spectrum with the covariance.
  Tensor gram(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = dot(x.row(i), x.row(j));
      gram(i, j) = v;
      gram(j, i) = v;
    }
  }
  const Eigen2 eig = symmetric_eigen(std::move(gram));
  if (!(eig.values[0] > 0.0) || eig.values[1] <= kProjectionRankTolerance * eig.values[0]) {
    throw ProjectionError("class means span fewer than 2 dimensions");
  }
  Tensor coords(m, 2);
  for (std::size_t k = 0; k < 2; ++k) {
    const double sd = std::sqrt(eig.values[k]);
    // loading vector x^T u / sd, used only for the sign convention
    std::vector<double> loading(d, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < d; ++j) loading[j] += x(i, j) * eig.vectors(i, k) / sd;
    }
    std::size_t arg = 0;
    for (std::size_t j = 1; j < d; ++j) {
      if (std::abs(loading[j]) > std::abs(loading[arg])) arg = j;
    }
    const double sign = loading[arg] < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < m; ++i) coords(i, k) = sign * eig.vectors(i, k) * sd;
  }
  return coords;
}

struct Projection {
  std::vector<int> labels;
  Tensor coords;  // labels.size() x 2
};

inline Projection export_projection(const SessionState& state) {
  return {state.replay.labels(), project_2d(class_embeddings(state))};
}

}  // namespace fscil
