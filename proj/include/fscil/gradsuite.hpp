// SPDX-License-Identifier: Apache-2.0
//
// Randomized finite-difference suite over every primitive operator and every
// training loss (including the encoder stack feeding them).
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fscil/autodiff.hpp"
#include "fscil/gradcheck.hpp"
#include "fscil/losses.hpp"
#include "fscil/model.hpp"
#include "fscil/proxies.hpp"
#include "fscil/rng.hpp"

namespace fscil {

struct SuiteEntry {
  std::string name;
  std::size_t instances = 0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradSuiteOptions {
  std::size_t instances = 20;
  std::uint64_t seed = 2024;
  GradCheckOptions check{};
};

namespace detail {

struct Instance {
  std::vector<Tensor> params;
  GraphBuilder build;
};

using InstanceMaker = std::function<Instance(Rng&)>;

inline std::size_t draw(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline Tensor gaussian(Rng& rng, std::size_t r, std::size_t c) { return Tensor(r, c, gaussian_vector(rng, r * c, 1.0)); }

/// Entries bounded away from zero so that no finite-difference probe
/// crosses the relu kink.
inline Tensor off_zero(Rng& rng, std::size_t r, std::size_t c) {
  Tensor t(r, c);
  std::uniform_real_distribution<double> mag(0.1, 1.5);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

inline std::vector<int> labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(draw(rng, 0, classes - 1));
  return y;
}

inline std::vector<std::pair<std::string, InstanceMaker>> makers() {
  std::vector<std::pair<std::string, InstanceMaker>> out;

  out.emplace_back("matmul", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 6), k = draw(rng, 1, 6), m = draw(rng, 1, 6);
    Tensor w = gaussian(rng, 1, n), r = gaussian(rng, m, 1);
    return Instance{{gaussian(rng, n, k), gaussian(rng, k, m)}, [w, r](Graph& g, std::span<const Var> v) {
                      return matmul(matmul(g.constant(w), matmul(v[0], v[1])), g.constant(r));
                    }};
  });
  out.emplace_back("add", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 6), m = draw(rng, 1, 6);
    Tensor w = gaussian(rng, 1, n), r = gaussian(rng, m, 1);
    return Instance{{gaussian(rng, n, m), gaussian(rng, 1, m)}, [w, r](Graph& g, std::span<const Var> v) {
                      Var s = add(scale(v[0], 0.5), v[1]);  // row broadcast
                      return matmul(matmul(g.constant(w), add(s, v[0])), g.constant(r));
                    }};
  });
  out.emplace_back("scale", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 6), m = draw(rng, 1, 6);
    const double f = std::uniform_real_distribution<double>(-3.0, 3.0)(rng);
    Tensor w = gaussian(rng, 1, n), r = gaussian(rng, m, 1);
    return Instance{{gaussian(rng, n, m)}, [w, r, f](Graph& g, std::span<const Var> v) {
                      return matmul(matmul(g.constant(w), scale(v[0], f)), g.constant(r));
                    }};
  });
  out.emplace_back("relu", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 6), m = draw(rng, 1, 6);
    Tensor w = gaussian(rng, 1, n), r = gaussian(rng, m, 1);
    return Instance{{off_zero(rng, n, m)}, [w, r](Graph& g, std::span<const Var> v) {
                      return matmul(matmul(g.constant(w), relu(v[0])), g.constant(r));
                    }};
  });
  for (CosinePairing pairing :
       {CosinePairing::RowWise, CosinePairing::AllPairs, CosinePairing::AllPairsOffDiagonal}) {
    out.emplace_back("cosine", [pairing](Rng& rng) {
      const std::size_t n = draw(rng, 1, 6), d = draw(rng, 2, 6);
      const std::size_t m = pairing == CosinePairing::AllPairs ? draw(rng, 1, 6) : n;
      const std::size_t cols = pairing == CosinePairing::RowWise ? 1 : m;
      Tensor w = gaussian(rng, 1, n), r = gaussian(rng, cols, 1);
      return Instance{{gaussian(rng, n, d), gaussian(rng, m, d)}, [w, r, pairing](Graph& g, std::span<const Var> v) {
                        return matmul(matmul(g.constant(w), cosine(v[0], v[1], pairing)),
                                      g.constant(r));
                      }};
    });
  }
  out.emplace_back("l2norm", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 6), d = draw(rng, 1, 6);
    Tensor w = gaussian(rng, 1, n);
    return Instance{{gaussian(rng, n, d)}, [w](Graph& g, std::span<const Var> v) {
                      return matmul(g.constant(w), row_norm(v[0]));
                    }};
  });
  out.emplace_back("mean_rows", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 6), m = draw(rng, 1, 6);
    Tensor r = gaussian(rng, m, 1);
    return Instance{{gaussian(rng, n, m)}, [r](Graph& g, std::span<const Var> v) {
                      return matmul(mean_rows(v[0]), g.constant(r));
                    }};
  });
  out.emplace_back("softmax_ce", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 8), m = draw(rng, 2, 6);
    std::vector<int> y = labels(rng, n, m);
    return Instance{{gaussian(rng, n, m)}, [y](Graph&, std::span<const Var> v) { return softmax_cross_entropy(v[0], y); }};
  });

  // Losses over embeddings and heads.
  out.emplace_back("loss_ce", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 8), m = draw(rng, 2, 6), d = draw(rng, 2, 8);
    std::vector<int> y = labels(rng, n, m);
    return Instance{{gaussian(rng, n, d), gaussian(rng, m, d)},
                    [y](Graph&, std::span<const Var> v) { return loss_ce(cosine_logits(v[0], v[1]), y); }};
  });
  out.emplace_back("loss_ac", [](Rng& rng) {
    const std::size_t c = draw(rng, 1, 6), d = draw(rng, 2, 8);
    return Instance{{gaussian(rng, c, d), gaussian(rng, c, d)},
                    [](Graph&, std::span<const Var> v) { return loss_ac(v[0], v[1]); }};
  });
  out.emplace_back("loss_base", [](Rng& rng) {
    const std::size_t n = draw(rng, 1, 8), c = draw(rng, 2, 5), d = draw(rng, 2, 8);
    std::vector<int> y = labels(rng, n, c);
    Tensor ortho = gen_orthogonal(c, std::max(c, d), rng());
    return Instance{{gaussian(rng, n, ortho.cols()), gaussian(rng, c, ortho.cols())},
                    [y, ortho](Graph& g, std::span<const Var> v) {
                      return total_base_loss(loss_ce(cosine_logits(v[0], v[1]), y),
                                             loss_ac(v[1], g.constant(ortho.detached())), 0.7);
                    }};
  });
  out.emplace_back("loss_db", [](Rng& rng) {
    const std::size_t c = draw(rng, 1, 5), nd = draw(rng, 1, 5), d = draw(rng, 2, 8);
    return Instance{{gaussian(rng, c, d), gaussian(rng, nd, d)},
                    [](Graph&, std::span<const Var> v) { return db_loss(v[0], v[1], DbTerms{}); }};
  });
  out.emplace_back("loss_rd", [](Rng& rng) {
    const std::size_t c = draw(rng, 1, 5), nd = draw(rng, 1, 5), n = draw(rng, 1, 10), d = draw(rng, 2, 8);
    std::vector<int> y = labels(rng, n, c + nd);
    const bool balance = std::bernoulli_distribution(0.5)(rng);
    return Instance{{gaussian(rng, n, d), gaussian(rng, c, d), gaussian(rng, nd, d)},
                    [y, c, balance](Graph&, std::span<const Var> v) { return loss_rd(v[0], y, v[1], v[2], c, balance); }};
  });
  out.emplace_back("encoders", [](Rng& rng) {
    Dims dims;
    dims.input_dim = draw(rng, 2, 5);
    dims.backbone_hidden = draw(rng, 2, 5);
    dims.backbone_hidden_layers = draw(rng, 0, 2);
    dims.backbone_out = draw(rng, 2, 5);
    dims.controller_hidden = draw(rng, 2, 6);
    dims.controller_out = draw(rng, 2, 5);
    dims.base_classes = draw(rng, 2, 4);
    ModelParams p = init_params(dims, rng());
    // random biases keep the embedding away from the origin
    for (Tensor* t : parameter_list(p)) {
      if (t->rows() == 1 && t != &p.classifier) {
        const Tensor b = gaussian(rng, 1, t->cols());
        std::copy(b.data().begin(), b.data().end(), t->data().begin());
      }
    }
    const std::size_t n = draw(rng, 1, 6);
    Tensor x = gaussian(rng, n, dims.input_dim);
    std::vector<int> y = labels(rng, n, dims.base_classes);
    std::vector<Tensor> params;
    for (Tensor* t : parameter_list(p)) params.push_back(t->detached());
    const std::size_t layers = p.backbone.size();
    return Instance{std::move(params), [x, y, layers](Graph& g, std::span<const Var> v) {
                      BoundModel m;
                      std::size_t k = 0;
                      for (std::size_t i = 0; i < layers; ++i, k += 2) m.backbone.push_back({v[k], v[k + 1]});
                      for (std::size_t i = 0; i < 2; ++i, k += 2) m.controller[i] = {v[k], v[k + 1]};
                      m.classifier = v[k];
                      Var e = encode_controller(encode_backbone(g.constant(x.detached()), m), m);
                      return loss_ce(cosine_logits(e, m.classifier), y);
                    }};
  });
  return out;
}

}  // namespace detail

/// Runs `instances` random cases per entry; entries sharing a name (the
/// three cosine pairings) are merged.
inline std::vector<SuiteEntry> run_gradient_suite(const GradSuiteOptions& opt = {}) {
  std::vector<SuiteEntry> out;
  std::size_t index = 0;
  for (auto& [name, make] : detail::makers()) {
    Rng rng(derive_seed(opt.seed, name, index++));
    auto it = std::find_if(out.begin(), out.end(), [&](const SuiteEntry& e) { return e.name == name; });
    if (it == out.end()) {
      out.push_back({name, 0, 0.0, true});
      it = out.end() - 1;
    }
    for (std::size_t i = 0; i < opt.instances; ++i) {
      detail::Instance inst = make(rng);
      const GradCheckReport r = check_gradients(inst.build, inst.params, opt.check);
      ++it->instances;
      it->max_rel_error = std::max(it->max_rel_error, r.max_rel_error());
      it->passed = it->passed && r.passed;
    }
  }
  return out;
}

}  // namespace fscil
