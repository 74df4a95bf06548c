// SPDX-License-Identifier: Apache-2.0
//
// Pre-defined orthogonal proxies for base classes and data-free
// disentanglement proxies reserved for novel classes.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fscil/autodiff.hpp"
#include "fscil/error.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct ProxySet {
  Tensor orthogonal;   // |C0| x d', unit rows, mutually orthogonal
  Tensor disentangle;  // N_d x d', unit rows
  std::size_t assigned_count = 0;

  std::size_t capacity() const { return disentangle.rows(); }
  std::size_t available() const { return capacity() - assigned_count; }
};

/// `count` orthonormal rows of dimension `dim` from a seeded Gaussian matrix
/// (modified Gram-Schmidt with one re-orthogonalization pass).
inline Tensor gen_orthogonal(std::size_t count, std::size_t dim, std::uint64_t seed) {
  if (count > dim) {
    throw InfeasibleError("cannot place " + std::to_string(count) +
                          " mutually orthogonal vectors in dimension " + std::to_string(dim));
  }
  Rng rng(derive_seed(seed, "orthogonal"));
  Tensor q(count, dim);
  for (std::size_t i = 0; i < count; ++i) {
    auto row = q.row(i);
    for (int attempt = 0;; ++attempt) {
      const auto v = gaussian_vector(rng, dim);
      std::copy(v.begin(), v.end(), row.begin());
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < i; ++j) {
          const auto prev = q.row(j);
          const double c = dot(row, prev);
          for (std::size_t k = 0; k < dim; ++k) row[k] -= c * prev[k];
        }
      }
      const double n = norm2(row);
      if (n > 1e-6) {
        for (double& x : row) x /= n;
        break;
      }
      if (attempt > 16) throw NumericError("orthogonalization failed to find a fresh direction");
    }
  }
  return q;
}

/// Which terms of the discriminability boosting objective are active.
struct DbTerms {
  bool base_novel = true;   // sum over (n, c) of cos(proxy_c, beta_n)
  bool novel_novel = true;  // sum over ordered pairs n1 != n2 of cos(beta_n1, beta_n2)
};

/// Graph form of the discriminability boosting loss. Both sums are plain
/// (unaveraged) sums; novel-novel runs over ordered pairs.
inline Var db_loss(Var ortho, Var beta, DbTerms terms = {}) {
  Graph& g = beta.graph();
  Var total = g.constant(Tensor(1, 1, 0.0));
  if (terms.base_novel && ortho.value().rows() > 0) {
    total = add(total, sum_all(cosine(beta, ortho, CosinePairing::AllPairs)));
  }
  if (terms.novel_novel && beta.value().rows() > 1) {
    total = add(total, sum_all(cosine(beta, beta, CosinePairing::AllPairsOffDiagonal)));
  }
  return total;
}

/// Value of the full discriminability boosting loss.
inline double eval_L_db(const Tensor& ortho, const Tensor& beta) {
  if (ortho.cols() != beta.cols()) {
    throw DimensionError("proxy widths differ: " + shape_string(ortho) + " vs " + shape_string(beta));
  }
  Graph g;
  return scalar(db_loss(g.constant(ortho.detached()), g.constant(beta.detached())));
}

inline void normalize_rows_in_place(Tensor& t) {
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto row = t.row(i);
    const double n = norm2(row);
    if (!(n > 0.0)) throw DegenerateInputError("cannot normalize a zero-norm proxy");
    for (double& x : row) x /= n;
  }
}

/// Seeded Gaussian rows projected to the unit sphere.
inline Tensor init_disentanglement(std::size_t n_d, std::size_t dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "beta"));
  Tensor beta(n_d, dim, gaussian_vector(rng, n_d * dim));
  normalize_rows_in_place(beta);
  return beta;
}

/// Seeded Gaussian rows made orthogonal to the rows of `ortho` and to each
/// other (two Gram-Schmidt passes), then normalized. Rows beyond the free
/// dimension count d' - |C0| stay plain normalized Gaussians.
inline Tensor init_disentanglement_orthogonal(const Tensor& ortho, std::size_t n_d, std::uint64_t seed) {
  Tensor beta = init_disentanglement(n_d, ortho.cols(), seed);
  const std::size_t free = ortho.cols() > ortho.rows() ? ortho.cols() - ortho.rows() : 0;
  for (std::size_t n = 0; n < std::min(n_d, free); ++n) {
    auto row = beta.row(n);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t c = 0; c < ortho.rows(); ++c) {
        const double p = dot(row, ortho.row(c)) / dot(ortho.row(c), ortho.row(c));
        for (std::size_t k = 0; k < row.size(); ++k) row[k] -= p * ortho(c, k);
      }
      for (std::size_t m = 0; m < n; ++m) {
        const double p = dot(row, beta.row(m));
        for (std::size_t k = 0; k < row.size(); ++k) row[k] -= p * beta(m, k);
      }
    }
    const double nrm = norm2(row);
    if (!(nrm > 1e-12)) throw DegenerateInputError("orthogonal completion collapsed");
    for (double& x : row) x /= nrm;
  }
  return beta;
}

enum class BetaInit { Gaussian, OrthogonalCompletion };

struct DisentanglementOptions {
  std::size_t steps = 1000;
  double lr = 0.02;
  std::uint64_t seed = 0;
  DbTerms terms{};
  std::size_t patience = 50;       // early-stop window
  double min_improvement = 1e-9;   // required loss decrease over the window
  BetaInit init = BetaInit::OrthogonalCompletion;
};

struct DisentanglementResult {
  Tensor beta;
  std::vector<double> loss_trace;  // objective before the first step and after each step
};

/// Gradient descent on the proxies only; the orthogonal proxies stay fixed
/// and every step is followed by renormalization to unit length.
inline DisentanglementResult optimize_disentanglement(const Tensor& ortho, std::size_t n_d,
                                                      const DisentanglementOptions& opt) {
  if (!(opt.lr > 0.0)) throw Error("proxy learning rate must be positive");
  DisentanglementResult result;
  result.beta = opt.init == BetaInit::Gaussian ? init_disentanglement(n_d, ortho.cols(), opt.seed)
                                               : init_disentanglement_orthogonal(ortho, n_d, opt.seed);

  auto objective = [&](const Tensor& beta, Tensor* grad_out) {
    Graph g;
    Var o = g.constant(ortho.detached());
    Var b = grad_out ? g.parameter(beta.detached()) : g.constant(beta.detached());
    Var loss = db_loss(o, b, opt.terms);
    const double v = scalar(loss);
    if (grad_out) {
      g.backward(loss);
      *grad_out = Tensor(beta.rows(), beta.cols(), std::vector<double>(b.grad().begin(), b.grad().end()));
    }
    return v;
  };

  result.loss_trace.push_back(objective(result.beta, nullptr));
  for (std::size_t step = 0; step < opt.steps; ++step) {
    Tensor grad;
    objective(result.beta, &grad);
    auto w = result.beta.data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= opt.lr * grad.data()[k];
    normalize_rows_in_place(result.beta);
    result.loss_trace.push_back(objective(result.beta, nullptr));
    const std::size_t t = result.loss_trace.size() - 1;
    if (opt.patience > 0 && t >= opt.patience &&
        result.loss_trace[t - opt.patience] - result.loss_trace[t] < opt.min_improvement) {
      break;
    }
  }
  return result;
}

/// Largest cos(beta_n, proxy_c) and largest cos(beta_n1, beta_n2), n1 != n2.
/// Both stay at -1 when the corresponding set of pairs is empty.
struct ProxyCorrelation {
  double max_base_novel = -1.0;
  double max_novel_novel = -1.0;
};

inline ProxyCorrelation proxy_correlation(const Tensor& ortho, const Tensor& beta) {
  ProxyCorrelation out;
  for (std::size_t n = 0; n < beta.rows(); ++n) {
    for (std::size_t c = 0; c < ortho.rows(); ++c) {
      out.max_base_novel = std::max(out.max_base_novel, cosine_value(beta.row(n), ortho.row(c)));
    }
    for (std::size_t m = 0; m < beta.rows(); ++m) {
      if (m != n) out.max_novel_novel = std::max(out.max_novel_novel, cosine_value(beta.row(n), beta.row(m)));
    }
  }
  return out;
}

}  // namespace fscil
