// SPDX-License-Identifier: Apache-2.0
//
// Tape-based reverse-mode differentiation over the handful of operators the
// training losses are built from: matmul, add (with row broadcast), scale,
// relu, cosine, row L2-norm, mean-over-rows and a fused softmax
// cross-entropy. Nodes are appended in evaluation order, so insertion order is
// a topological order and backward is a single reverse sweep.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

enum class OpKind {
  Leaf,
  MatMul,
  Add,
  Scale,
  Relu,
  Cosine,
  RowNorm,
  MeanRows,
  SoftmaxCrossEntropy,
};

inline std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Cosine: return "cosine";
    case OpKind::RowNorm: return "l2norm";
    case OpKind::MeanRows: return "mean_rows";
    case OpKind::SoftmaxCrossEntropy: return "softmax_ce";
  }
  return "unknown";
}

/// How the rows of the two cosine operands are paired.
enum class CosinePairing {
  RowWise,               ///< n x d with n x d -> n x 1, row i against row i
  AllPairs,              ///< n x d with m x d -> n x m
  AllPairsOffDiagonal,   ///< n x d with n x d -> n x n, diagonal forced to 0
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
class Var {
 public:
  Var() = default;

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  inline const Tensor& value() const;
  inline std::span<const double> grad() const;

 private:
  friend class Graph;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

namespace detail {

// c (m x n) += a (m x k) * b (k x n)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c (m x k) += g (m x n) * b^T, b is (k x n)
inline void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n,
                    std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      crow[p] += s;
    }
  }
}

// c (k x n) += a^T * g, a is (m x k), g is (m x n)
inline void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  /// Leaf whose gradient is accumulated by backward().
  Var parameter(Tensor value) { return leaf(std::move(value), true); }

  const Tensor& value(Var v) const { return node(v).value; }

  /// Gradient accumulated into `v`; empty when `v` does not require grad.
  std::span<const double> grad(Var v) const { return node(v).value.grad(); }

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(Var v) const { return node(v).kind; }

  /// Test fixture: scales the gradient propagated through every node of the
  /// given kind by 1.5 so that checkers can be shown to catch a wrong rule.
  void inject_backward_fault(std::optional<OpKind> kind) { fault_ = kind; }

  /// Reverse sweep from a 1x1 `loss`. Gradients accumulate additively into
  /// every node that requires them; call reset_grads() before a second sweep.
  void backward(Var loss) {
    owns(loss);
    if (backward_done_) throw GraphError("backward called twice without reset_grads()");
    Node& root = nodes_[loss.id()];
    if (root.value.rows() != 1 || root.value.cols() != 1) {
      throw DimensionError("backward requires a 1x1 loss, got " + shape_string(root.value));
    }
    backward_done_ = true;
    if (!root.value.requires_grad()) return;
    root.value.grad()[0] += 1.0;
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.kind == OpKind::Leaf || !n.value.requires_grad()) continue;
      propagate(n);
    }
    for (const Node& n : nodes_) {
      for (double g : n.value.grad()) {
        if (!std::isfinite(g)) {
          throw NumericError(std::string("non-finite gradient at ") + std::string(op_name(n.kind)));
        }
      }
    }
  }

  void reset_grads() {
    for (Node& n : nodes_) n.value.zero_grad();
    backward_done_ = false;
  }

  // ---- operators -----------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.cols() != bv.rows()) {
      throw DimensionError("matmul " + shape_string(av) + " by " + shape_string(bv));
    }
    Tensor out(av.rows(), bv.cols());
    detail::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), av.rows(), av.cols(),
                    bv.cols());
    return push(OpKind::MatMul, {a.id(), b.id()}, std::move(out));
  }

  /// Elementwise sum. `b` may also be a 1 x cols row broadcast over a's rows.
  Var add(Var a, Var b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const bool broadcast = bv.rows() == 1 && av.rows() != 1 && bv.cols() == av.cols();
    if (!same_shape(av, bv) && !broadcast) {
      throw DimensionError("add " + shape_string(av) + " and " + shape_string(bv));
    }
    Tensor out = av.detached();
    auto o = out.data();
    const auto bd = bv.data();
    const std::size_t cols = av.cols();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += broadcast ? bd[i % cols] : bd[i];
    return push(OpKind::Add, {a.id(), b.id()}, std::move(out));
  }

  Var scale(Var a, double factor) {
    Tensor out = value(a).detached();
    for (double& v : out.data()) v *= factor;
    Var r = push(OpKind::Scale, {a.id(), kNone}, std::move(out));
    nodes_[r.id()].factor = factor;
    return r;
  }

  Var relu(Var a) {
    Tensor out = value(a).detached();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return push(OpKind::Relu, {a.id(), kNone}, std::move(out));
  }

  Var cosine(Var a, Var b, CosinePairing pairing) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.cols() != bv.cols()) {
      throw DimensionError("cosine " + shape_string(av) + " with " + shape_string(bv));
    }
    if (pairing != CosinePairing::AllPairs && av.rows() != bv.rows()) {
      throw DimensionError("paired cosine needs equal row counts, got " + shape_string(av) +
                           " and " + shape_string(bv));
    }
    Node cache;
    cache.unit_a = normalize_rows(av, cache.norm_a);
    cache.unit_b = normalize_rows(bv, cache.norm_b);
    const std::size_t n = av.rows();
    const std::size_t m = bv.rows();
    const std::size_t d = av.cols();
    Tensor out;
    if (pairing == CosinePairing::RowWise) {
      out = Tensor(n, 1);
      for (std::size_t i = 0; i < n; ++i) {
        out(i, 0) = clamp_unit(dot(cache.unit_a.row(i), cache.unit_b.row(i)));
      }
    } else {
      out = Tensor(n, m);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          if (pairing == CosinePairing::AllPairsOffDiagonal && i == j) continue;
          double s = 0.0;
          const double* ua = cache.unit_a.row(i).data();
          const double* ub = cache.unit_b.row(j).data();
          for (std::size_t k = 0; k < d; ++k) s += ua[k] * ub[k];
          out(i, j) = clamp_unit(s);
        }
      }
    }
    Var r = push(OpKind::Cosine, {a.id(), b.id()}, std::move(out));
    Node& node = nodes_[r.id()];
    node.pairing = pairing;
    node.unit_a = std::move(cache.unit_a);
    node.unit_b = std::move(cache.unit_b);
    node.norm_a = std::move(cache.norm_a);
    node.norm_b = std::move(cache.norm_b);
    return r;
  }

  /// Per-row Euclidean norm, n x d -> n x 1. The gradient at a zero row is 0.
  Var row_norm(Var a) {
    const Tensor& av = value(a);
    Tensor out(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) out(i, 0) = norm2(av.row(i));
    return push(OpKind::RowNorm, {a.id(), kNone}, std::move(out));
  }

  /// n x m -> 1 x m.
  Var mean_rows(Var a) {
    const Tensor& av = value(a);
    if (av.rows() == 0) throw DimensionError("mean over zero rows");
    Tensor out(1, av.cols());
    for (std::size_t i = 0; i < av.rows(); ++i) {
      for (std::size_t j = 0; j < av.cols(); ++j) out(0, j) += av(i, j);
    }
    for (double& v : out.data()) v /= static_cast<double>(av.rows());
    return push(OpKind::MeanRows, {a.id(), kNone}, std::move(out));
  }

  /// Mean over rows of -log softmax(logits)[label]; returns 1x1.
  Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const Tensor& z = value(logits);
    if (labels.size() != z.rows() || z.rows() == 0) {
      throw DimensionError("softmax_ce: " + std::to_string(labels.size()) + " labels for " +
                           shape_string(z) + " logits");
    }
    Tensor probs(z.rows(), z.cols());
    double total = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
      const int y = labels[i];
      if (y < 0 || static_cast<std::size_t>(y) >= z.cols()) {
        throw DimensionError("softmax_ce label " + std::to_string(y) + " outside " +
                             std::to_string(z.cols()) + " classes");
      }
      const auto row = z.row(i);
      const double mx = *std::max_element(row.begin(), row.end());
      double sum = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) {
        probs(i, j) = std::exp(row[j] - mx);
        sum += probs(i, j);
      }
      for (std::size_t j = 0; j < row.size(); ++j) probs(i, j) /= sum;
      total += std::log(sum) + mx - row[static_cast<std::size_t>(y)];
    }
    Tensor out(1, 1, total / static_cast<double>(z.rows()));
    Var r = push(OpKind::SoftmaxCrossEntropy, {logits.id(), kNone}, std::move(out));
    nodes_[r.id()].unit_a = std::move(probs);
    nodes_[r.id()].labels.assign(labels.begin(), labels.end());
    return r;
  }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  struct Node {
    OpKind kind = OpKind::Leaf;
    std::array<std::size_t, 2> inputs{kNone, kNone};
    Tensor value;
    double factor = 0.0;
    CosinePairing pairing = CosinePairing::RowWise;
    // cosine: unit rows and norms of both operands; softmax_ce: probabilities in unit_a
    Tensor unit_a;
    Tensor unit_b;
    std::vector<double> norm_a;
    std::vector<double> norm_b;
    std::vector<int> labels;
  };

  static double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

  static Tensor normalize_rows(const Tensor& t, std::vector<double>& norms) {
    Tensor out = t.detached();
    norms.resize(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i) {
      const double nrm = norm2(t.row(i));
      if (!(nrm > 0.0)) throw DegenerateInputError("cosine of a zero-norm row");
      norms[i] = nrm;
      for (double& v : out.row(i)) v /= nrm;
    }
    return out;
  }

  const Node& node(Var v) const {
    owns(v);
    return nodes_[v.id()];
  }

  void owns(Var v) const {
    if (v.graph_ != this || v.id() >= nodes_.size()) throw GraphError("variable belongs to another graph");
  }

  Var leaf(Tensor value, bool requires_grad) {
    if (!value.all_finite()) throw NumericError("non-finite leaf value");
    value.set_requires_grad(requires_grad);
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Var push(OpKind kind, std::array<std::size_t, 2> inputs, Tensor value) {
    if (!value.all_finite()) {
      throw NumericError(std::string("non-finite output of ") + std::string(op_name(kind)));
    }
    bool needs = false;
    for (std::size_t in : inputs) {
      if (in != kNone && nodes_[in].value.requires_grad()) needs = true;
    }
    value.set_requires_grad(needs);
    Node n;
    n.kind = kind;
    n.inputs = inputs;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  Tensor* grad_target(std::size_t id) {
    if (id == kNone) return nullptr;
    Tensor& t = nodes_[id].value;
    return t.requires_grad() ? &t : nullptr;
  }

  void propagate(Node& n) {
    std::vector<double> g(n.value.grad().begin(), n.value.grad().end());
    if (fault_ && *fault_ == n.kind) {
      for (double& v : g) v *= 1.5;
    }
    Tensor* ga = grad_target(n.inputs[0]);
    Tensor* gb = grad_target(n.inputs[1]);
    switch (n.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::MatMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        const std::size_t m = a.rows(), k = a.cols(), cols = b.cols();
        if (ga) detail::gemm_nt(g.data(), b.data().data(), ga->grad().data(), m, cols, k);
        if (gb) detail::gemm_tn(a.data().data(), g.data(), gb->grad().data(), m, k, cols);
        break;
      }
      case OpKind::Add: {
        if (ga) {
          auto d = ga->grad();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
        }
        if (gb) {
          auto d = gb->grad();
          if (d.size() == g.size()) {
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
          } else {
            const std::size_t cols = d.size();
            for (std::size_t i = 0; i < g.size(); ++i) d[i % cols] += g[i];
          }
        }
        break;
      }
      case OpKind::Scale: {
        if (ga) {
          auto d = ga->grad();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += n.factor * g[i];
        }
        break;
      }
      case OpKind::Relu: {
        if (ga) {
          auto d = ga->grad();
          const auto x = nodes_[n.inputs[0]].value.data();
          for (std::size_t i = 0; i < d.size(); ++i) {
            if (x[i] > 0.0) d[i] += g[i];
          }
        }
        break;
      }
      case OpKind::Cosine:
        propagate_cosine(n, g, ga, gb);
        break;
      case OpKind::RowNorm: {
        if (ga) {
          const Tensor& a = nodes_[n.inputs[0]].value;
          auto d = ga->grad();
          for (std::size_t i = 0; i < a.rows(); ++i) {
            const double nrm = n.value(i, 0);
            if (nrm == 0.0) continue;
            for (std::size_t j = 0; j < a.cols(); ++j) d[i * a.cols() + j] += g[i] * a(i, j) / nrm;
          }
        }
        break;
      }
      case OpKind::MeanRows: {
        if (ga) {
          auto d = ga->grad();
          const std::size_t cols = n.value.cols();
          const double inv = 1.0 / static_cast<double>(d.size() / cols);
          for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i % cols] * inv;
        }
        break;
      }
      case OpKind::SoftmaxCrossEntropy: {
        if (ga) {
          const Tensor& p = n.unit_a;
          auto d = ga->grad();
          const double w = g[0] / static_cast<double>(p.rows());
          for (std::size_t i = 0; i < p.rows(); ++i) {
            for (std::size_t j = 0; j < p.cols(); ++j) {
              const double onehot = static_cast<int>(j) == n.labels[i] ? 1.0 : 0.0;
              d[i * p.cols() + j] += w * (p(i, j) - onehot);
            }
          }
        }
        break;
      }
    }
  }

  // With u = a/|a|, dL/da = (dL/du - (dL/du . u) u) / |a|; same for b.
  static void project_into(std::span<double> dst, std::span<const double> du,
                           std::span<const double> unit, double nrm) {
    const double radial = dot(du, unit);
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += (du[k] - radial * unit[k]) / nrm;
  }

  void propagate_cosine(const Node& n, const std::vector<double>& g, Tensor* ga, Tensor* gb) {
    const Tensor& ua = n.unit_a;
    const Tensor& ub = n.unit_b;
    const std::size_t d = ua.cols();
    std::vector<double> du(d);
    if (n.pairing == CosinePairing::RowWise) {
      for (std::size_t i = 0; i < ua.rows(); ++i) {
        if (ga) {
          for (std::size_t k = 0; k < d; ++k) du[k] = g[i] * ub(i, k);
          project_into(ga->grad().subspan(i * d, d), du, ua.row(i), n.norm_a[i]);
        }
        if (gb) {
          for (std::size_t k = 0; k < d; ++k) du[k] = g[i] * ua(i, k);
          project_into(gb->grad().subspan(i * d, d), du, ub.row(i), n.norm_b[i]);
        }
      }
      return;
    }
    const std::size_t rows = ua.rows();
    const std::size_t cols = ub.rows();
    const bool off_diag = n.pairing == CosinePairing::AllPairsOffDiagonal;
    auto gij = [&](std::size_t i, std::size_t j) {
      return off_diag && i == j ? 0.0 : g[i * cols + j];
    };
    if (ga) {
      for (std::size_t i = 0; i < rows; ++i) {
        std::fill(du.begin(), du.end(), 0.0);
        for (std::size_t j = 0; j < cols; ++j) {
          const double w = gij(i, j);
          if (w == 0.0) continue;
          const auto b = ub.row(j);
          for (std::size_t k = 0; k < d; ++k) du[k] += w * b[k];
        }
        project_into(ga->grad().subspan(i * d, d), du, ua.row(i), n.norm_a[i]);
      }
    }
    if (gb) {
      for (std::size_t j = 0; j < cols; ++j) {
        std::fill(du.begin(), du.end(), 0.0);
        for (std::size_t i = 0; i < rows; ++i) {
          const double w = gij(i, j);
          if (w == 0.0) continue;
          const auto a = ua.row(i);
          for (std::size_t k = 0; k < d; ++k) du[k] += w * a[k];
        }
        project_into(gb->grad().subspan(j * d, d), du, ub.row(j), n.norm_b[j]);
      }
    }
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  std::optional<OpKind> fault_;
};

inline const Tensor& Var::value() const { return graph_->value(*this); }
inline std::span<const double> Var::grad() const { return graph_->grad(*this); }

// ---- free-function operator surface ------------------------------------------

inline Graph& same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw GraphError("operands come from different graphs");
  return a.graph();
}

inline Var matmul(Var a, Var b) { return same_graph(a, b).matmul(a, b); }
inline Var add(Var a, Var b) { return same_graph(a, b).add(a, b); }
inline Var scale(Var a, double factor) { return a.graph().scale(a, factor); }
inline Var relu(Var a) { return a.graph().relu(a); }
inline Var cosine(Var a, Var b, CosinePairing pairing = CosinePairing::RowWise) {
  return same_graph(a, b).cosine(a, b, pairing);
}
inline Var row_norm(Var a) { return a.graph().row_norm(a); }
inline Var mean_rows(Var a) { return a.graph().mean_rows(a); }
inline Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  return logits.graph().softmax_cross_entropy(logits, labels);
}

inline Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

/// Sum of every entry, expressed as ones(1 x n) * a * ones(m x 1).
inline Var sum_all(Var a) {
  Graph& g = a.graph();
  const Tensor& v = a.value();
  Var left = g.constant(Tensor(1, v.rows(), 1.0));
  Var right = g.constant(Tensor(v.cols(), 1, 1.0));
  return matmul(matmul(left, a), right);
}

/// Rows of `top` followed by rows of `bottom`, built from two selector
/// matmuls so gradients reach both operands.
inline Var vstack(Var top, Var bottom) {
  Graph& g = same_graph(top, bottom);
  const std::size_t a = top.value().rows();
  const std::size_t b = bottom.value().rows();
  Tensor upper(a + b, a);
  Tensor lower(a + b, b);
  for (std::size_t i = 0; i < a; ++i) upper(i, i) = 1.0;
  for (std::size_t i = 0; i < b; ++i) lower(a + i, i) = 1.0;
  return add(matmul(g.constant(std::move(upper)), top), matmul(g.constant(std::move(lower)), bottom));
}

/// Scalar (1x1) value of a node.
inline double scalar(Var v) {
  const Tensor& t = v.value();
  if (t.size() != 1) throw DimensionError("expected a 1x1 value, got " + shape_string(t));
  return t(0, 0);
}

}  // namespace fscil
