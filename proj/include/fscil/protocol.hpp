// SPDX-License-Identifier: Apache-2.0
//
// Two-phase training: joint base-session learning with orthogonal proxy
// anchoring, then controller-only incremental adaptation under the relation
// disentanglement loss with a frozen backbone and class-mean replay.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fscil/autodiff.hpp"
#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/losses.hpp"
#include "fscil/model.hpp"
#include "fscil/proxies.hpp"
#include "fscil/rng.hpp"

namespace fscil {

/// Variants of disentanglement-proxy construction.
enum class DpdbMode {
  Full,         // base-novel + novel-novel terms, proxies optimized standalone
  NoNN,         // novel-novel term removed
  NoNNBN,       // both terms removed: proxies stay at their random init
  Direct,       // base-novel applied to live base-class embeddings during base training
};

inline std::string_view dpdb_name(DpdbMode m) {
  switch (m) {
    case DpdbMode::Full: return "full";
    case DpdbMode::NoNN: return "no_nn";
    case DpdbMode::NoNNBN: return "no_nn_bn";
    case DpdbMode::Direct: return "direct";
  }
  return "full";
}

struct TrainConfig {
  std::size_t base_epochs = 100;
  double base_lr = 0.05;
  std::size_t incr_iters = 500;
  double incr_lr = 0.02;
  double lambda_ac = 1.0;
  std::size_t batch_base = 128;   // N_b
  std::size_t batch_incr = 64;    // N'_b
  std::size_t num_proxies = 20;   // N_d
  std::uint64_t seed = 0;
  bool bw_enabled = true;
  bool opa_enabled = true;
  bool rd_enabled = true;
  DpdbMode dpdb_mode = DpdbMode::Full;
  double momentum = 0.0;
  bool train_classifier_incremental = false;
  std::size_t proxy_steps = 1000;
  double proxy_lr = 0.02;
  /// Layer widths; input_dim and base_classes are taken from the data.
  Dims dims{};
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.batch_base == 0 || cfg.batch_incr == 0) throw Error("batch sizes must be >= 1");
  if (!(cfg.base_lr > 0.0) || !(cfg.incr_lr > 0.0) || !(cfg.proxy_lr > 0.0)) {
    throw Error("learning rates must be positive");
  }
  if (cfg.lambda_ac < 0.0) throw Error("lambda_ac must be non-negative");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw Error("momentum must lie in [0, 1)");
}

/// Backbone-space class means of every seen class. Entries are write-once.
class ReplayStore {
 public:
  void add(int label, std::vector<double> mean, std::size_t session) {
    if (entries_.count(label) != 0) {
      throw ProtocolError("replay mean of class " + std::to_string(label) + " already stored");
    }
    entries_.emplace(label, Entry{std::move(mean), session});
  }

  bool contains(int label) const { return entries_.count(label) != 0; }
  std::size_t size() const { return entries_.size(); }

  const std::vector<double>& mean(int label) const { return entry(label).mean; }
  std::size_t session_of(int label) const { return entry(label).session; }

  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& [label, e] : entries_) out.push_back(label);
    return out;
  }

  /// One row per stored class, ascending label order.
  Tensor matrix() const {
    if (entries_.empty()) return {};
    Tensor out(entries_.size(), entries_.begin()->second.mean.size());
    std::size_t i = 0;
    for (const auto& [label, e] : entries_) {
      std::copy(e.mean.begin(), e.mean.end(), out.row(i++).begin());
    }
    return out;
  }

 private:
  struct Entry {
    std::vector<double> mean;
    std::size_t session;
  };

  const Entry& entry(int label) const {
    const auto it = entries_.find(label);
    if (it == entries_.end()) throw ProtocolError("no replay mean for class " + std::to_string(label));
    return it->second;
  }

  std::map<int, Entry> entries_;
};

struct SessionRange {
  std::size_t session_id = 0;
  int first_label = 0;
  std::size_t count = 0;
};

struct SessionState {
  ModelParams params;
  ProxySet proxies;
  ReplayStore replay;
  std::vector<SessionRange> sessions;
  std::vector<double> proxy_trace;

  std::size_t base_count() const { return params.classifier.rows(); }

  std::size_t seen_classes() const {
    std::size_t n = 0;
    for (const auto& s : sessions) n += s.count;
    return n;
  }

  int next_label() const { return static_cast<int>(seen_classes()); }

  /// Classifier rows followed by the assigned disentanglement proxies.
  Tensor head() const {
    return vconcat(params.classifier, head_rows(proxies.disentangle, proxies.assigned_count));
  }
};

/// Observation points for tests and diagnostics. All are optional.
struct IncrementalStep {
  std::size_t session = 0;
  std::size_t iteration = 0;
  std::span<const int> labels;
  std::span<const double> gamma;
  double loss = 0.0;
  const ModelParams* params = nullptr;
};

struct TrainHooks {
  std::function<void(const IncrementalStep&)> on_incremental_step;
  std::function<void(std::size_t epoch, double mean_loss)> on_base_epoch;
};

/// Per-class means of `h` rows, ascending label order.
inline std::map<int, std::vector<double>> class_means_of(const Tensor& h, std::span<const int> labels) {
  std::map<int, std::vector<double>> sums;
  std::map<int, std::size_t> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto& s = sums[labels[i]];
    if (s.empty()) s.assign(h.cols(), 0.0);
    const auto row = h.row(i);
    for (std::size_t k = 0; k < h.cols(); ++k) s[k] += row[k];
    ++counts[labels[i]];
  }
  for (auto& [label, s] : sums) {
    for (double& v : s) v /= static_cast<double>(counts[label]);
  }
  return sums;
}

namespace detail {

inline DbTerms db_terms(DpdbMode mode) {
  switch (mode) {
    case DpdbMode::Full: return {true, true};
    case DpdbMode::NoNN: return {true, false};
    case DpdbMode::NoNNBN: return {false, false};
    case DpdbMode::Direct: return {false, true};
  }
  return {};
}

/// Ablation-only coupling of proxies to live base embeddings: sum over the
/// batch's class-mean embeddings a_c and proxies b_n of cos(b_n, a_c).
inline Var direct_base_novel(Var embeddings, std::span<const int> labels, Var beta) {
  Graph& g = embeddings.graph();
  std::map<int, std::vector<std::size_t>> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) rows[labels[i]].push_back(i);
  Tensor averaging(rows.size(), labels.size());
  std::size_t r = 0;
  for (const auto& [label, idx] : rows) {
    for (std::size_t i : idx) averaging(r, i) = 1.0 / static_cast<double>(idx.size());
    ++r;
  }
  Var means = matmul(g.constant(std::move(averaging)), embeddings);
  return sum_all(cosine(beta, means, CosinePairing::AllPairs));
}

}  // namespace detail

inline void check_base_session(const SessionDataset& ds) {
  if (ds.session_id != 0) throw ProtocolError("base training needs session 0");
  if (ds.train.empty() || ds.classes.empty()) throw ProtocolError("empty base-session dataset");
  for (std::size_t c = 0; c < ds.classes.size(); ++c) {
    if (ds.classes[c] != static_cast<int>(c)) throw ProtocolError("base labels must be 0..|C0|-1");
  }
}

/// First half of phase 1: joint training of backbone, controller and
/// classifier with cross-entropy plus lambda_ac times the anchoring loss.
/// Only opa_enabled, lambda_ac, the dpdb_mode == Direct switch and the
/// optimizer fields of `cfg` influence the result.
inline SessionState train_base(const SessionDataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  validate(cfg);
  check_base_session(ds);

  Dims dims = cfg.dims;
  dims.input_dim = ds.dim();
  dims.base_classes = ds.classes.size();

  SessionState state;
  state.params = init_params(dims, cfg.seed);
  state.proxies.orthogonal = gen_orthogonal(dims.base_classes, dims.controller_out, derive_seed(cfg.seed, "proxies"));
  const bool direct = cfg.dpdb_mode == DpdbMode::Direct;
  if (direct) {
    state.proxies.disentangle = init_disentanglement(cfg.num_proxies, dims.controller_out, derive_seed(cfg.seed, "dpdb"));
  }
  const double lambda = cfg.opa_enabled ? cfg.lambda_ac : 0.0;

  const Tensor x_all = features_matrix(ds.train);
  const std::vector<int> y_all = labels_of(ds.train);
  std::vector<std::size_t> order(ds.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "base-shuffle"));
  Sgd sgd(cfg.base_lr, cfg.momentum);
  std::vector<Tensor*> targets = parameter_list(state.params);

  for (std::size_t epoch = 0; epoch < cfg.base_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_base) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_base);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<int> yb;
      yb.reserve(idx.size());
      for (std::size_t i : idx) yb.push_back(y_all[i]);

      Graph g;
      BoundModel m = bind(g, state.params);
      Var e = encode_controller(encode_backbone(g.constant(gather_rows(x_all, idx)), m), m);
      Var loss = loss_ce(cosine_logits(e, m.classifier), yb);
      if (lambda > 0.0) {
        loss = total_base_loss(loss, loss_ac(m.classifier, g.constant(state.proxies.orthogonal.detached())), lambda);
      }
      Var beta;
      if (direct) {
        beta = g.parameter(state.proxies.disentangle.detached());
        loss = add(loss, detail::direct_base_novel(e, yb, beta));
        if (beta.value().rows() > 1) {
          loss = add(loss, sum_all(cosine(beta, beta, CosinePairing::AllPairsOffDiagonal)));
        }
      }
      g.backward(loss);
      sgd.step(targets, parameter_list(m));
      if (direct) {
        auto w = state.proxies.disentangle.data();
        const auto grad = beta.grad();
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= cfg.proxy_lr * grad[k];
        normalize_rows_in_place(state.proxies.disentangle);
      }
      loss_sum += scalar(loss);
      ++batches;
    }
    if (hooks.on_base_epoch) hooks.on_base_epoch(epoch, loss_sum / static_cast<double>(batches));
  }
  return state;
}

/// Second half of phase 1: builds the disentanglement proxies (except in
/// Direct mode, where train_base already did), stores backbone-space class
/// means and freezes the backbone.
inline SessionState finish_base(SessionState state, const SessionDataset& ds, const TrainConfig& cfg) {
  validate(cfg);
  check_base_session(ds);
  if (!state.sessions.empty()) throw ProtocolError("base session already finished");
  if (cfg.dpdb_mode != DpdbMode::Direct) {
    DisentanglementOptions opt;
    opt.steps = cfg.proxy_steps;
    opt.lr = cfg.proxy_lr;
    opt.seed = derive_seed(cfg.seed, "dpdb");
    opt.terms = detail::db_terms(cfg.dpdb_mode);
    auto result = optimize_disentanglement(state.proxies.orthogonal, cfg.num_proxies, opt);
    state.proxies.disentangle = std::move(result.beta);
    state.proxy_trace = std::move(result.loss_trace);
  }

  const Tensor h = encode_backbone(features_matrix(ds.train), state.params);
  for (auto& [label, mean] : class_means_of(h, labels_of(ds.train))) state.replay.add(label, std::move(mean), 0);

  state.params.frozen_backbone = true;
  state.params.frozen_classifier = !cfg.train_classifier_incremental;
  state.sessions.push_back({0, 0, ds.classes.size()});
  return state;
}

/// Phase 1: train_base followed by finish_base.
inline SessionState run_base_session(const SessionDataset& ds, const TrainConfig& cfg,
                                     const TrainHooks& hooks = {}) {
  return finish_base(train_base(ds, cfg, hooks), ds, cfg);
}

/// Phase 2 for one few-shot session. Only the controller (and, when
/// configured, the classifier) is updated.
inline SessionState run_incremental_session(SessionState state, const SessionDataset& ds,
                                            const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  validate(cfg);
  if (state.sessions.empty()) throw ProtocolError("incremental session before the base session");
  if (ds.classes.empty() || ds.train.empty()) throw ProtocolError("empty incremental session");
  const int first = state.next_label();
  for (std::size_t c = 0; c < ds.classes.size(); ++c) {
    if (ds.classes[c] != first + static_cast<int>(c)) {
      throw ProtocolError("session " + std::to_string(ds.session_id) + " labels must be contiguous from " +
                          std::to_string(first));
    }
  }
  if (ds.way() > state.proxies.available()) {
    throw CapacityError("session " + std::to_string(ds.session_id) + " needs " + std::to_string(ds.way()) +
                        " disentanglement proxies, " + std::to_string(state.proxies.available()) + " left");
  }

  const std::size_t base_count = state.base_count();
  const std::size_t active_proxies = state.proxies.assigned_count + ds.way();
  const Tensor beta = head_rows(state.proxies.disentangle, active_proxies);

  // Mixed pool: one replayed backbone mean per old class, then fresh samples.
  const Tensor h_fresh = encode_backbone(features_matrix(ds.train), state.params);
  const std::vector<int> y_fresh = labels_of(ds.train);
  const Tensor pool = vconcat(state.replay.matrix(), h_fresh);
  std::vector<int> pool_labels = state.replay.labels();
  pool_labels.insert(pool_labels.end(), y_fresh.begin(), y_fresh.end());

  Rng rng(derive_seed(cfg.seed, "incremental", ds.session_id));
  std::uniform_int_distribution<std::size_t> pick(0, pool.rows() - 1);
  Sgd sgd(cfg.incr_lr, cfg.momentum);
  std::vector<Tensor*> targets = parameter_list(state.params);
  std::vector<std::size_t> idx(cfg.batch_incr);
  std::vector<int> yb(cfg.batch_incr);

  for (std::size_t it = 0; it < cfg.incr_iters; ++it) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      idx[i] = pick(rng);
      yb[i] = pool_labels[idx[i]];
    }
    const std::vector<double> gamma = balance_weights(yb, cfg.bw_enabled);

    Graph g;
    BoundModel m = bind(g, state.params, {false, true, true});
    Var e = encode_controller(g.constant(gather_rows(pool, idx)), m);
    Var beta_var = g.constant(beta.detached());
    Var loss;
    if (cfg.rd_enabled) {
      loss = loss_rd(e, yb, m.classifier, beta_var, base_count, cfg.bw_enabled);
    } else {
      loss = loss_ce(cosine_logits(e, vstack(m.classifier, beta_var)), yb);
    }
    g.backward(loss);
    sgd.step(targets, parameter_list(m));
    if (hooks.on_incremental_step) {
      hooks.on_incremental_step({ds.session_id, it, yb, gamma, scalar(loss), &state.params});
    }
  }

  for (auto& [label, mean] : class_means_of(h_fresh, y_fresh)) {
    state.replay.add(label, std::move(mean), ds.session_id);
  }
  state.proxies.assigned_count = active_proxies;
  state.sessions.push_back({ds.session_id, first, ds.way()});
  return state;
}

struct Inference {
  std::vector<int> labels;        // -1 for degenerate rows
  Tensor probabilities;           // zero rows for degenerate rows
  std::vector<bool> degenerate;
  std::size_t degenerate_count = 0;
};

/// Cosine prediction against the concatenated head; ties go to the lowest index.
inline Inference infer(const SessionState& state, const Tensor& x) {
  if (state.sessions.empty()) throw ProtocolError("inference before the base session");
  const Tensor e = encode_controller(encode_backbone(x, state.params), state.params);
  const Tensor head = state.head();
  Inference out;
  out.labels.assign(e.rows(), -1);
  out.degenerate.assign(e.rows(), false);
  out.probabilities = Tensor(e.rows(), head.rows());
  std::vector<std::size_t> good;
  for (std::size_t i = 0; i < e.rows(); ++i) {
    if (norm2(e.row(i)) > 0.0) {
      good.push_back(i);
    } else {
      out.degenerate[i] = true;
      ++out.degenerate_count;
    }
  }
  if (good.empty()) return out;
  const Tensor p = predict(gather_rows(e, good), head);
  for (std::size_t r = 0; r < good.size(); ++r) {
    const auto row = p.row(r);
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > row[best]) best = j;
    }
    out.labels[good[r]] = static_cast<int>(best);
    std::copy(row.begin(), row.end(), out.probabilities.row(good[r]).begin());
  }
  return out;
}

}  // namespace fscil
