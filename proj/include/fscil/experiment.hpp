// SPDX-License-Identifier: Apache-2.0
//
// End-to-end runs (base session, every incremental session, evaluation after
// each) and the ablation sweep.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fscil/data.hpp"
#include "fscil/error.hpp"
#include "fscil/metrics.hpp"
#include "fscil/protocol.hpp"

namespace fscil {

/// Everything a run needs. One seed drives data generation and training.
struct ExperimentConfig {
  GenSpec gen{};
  TrainConfig train{};
  std::optional<std::string> data_manifest;  // precomputed features instead of gen

  std::uint64_t seed() const { return train.seed; }
  void set_seed(std::uint64_t s) {
    gen.seed = s;
    train.seed = s;
  }
};

struct RunResult {
  SessionState state;
  RunReport report;
};

/// Rejects a session list before any training happens: disjoint label
/// spaces and enough disentanglement proxies for every novel class.
inline void check_runnable(std::span<const SessionDataset> sessions, const TrainConfig& cfg) {
  if (sessions.empty()) throw ProtocolError("no sessions to run");
  validate_sessions(sessions);
  std::size_t novel = 0;
  for (const auto& ds : sessions.subspan(1)) novel += ds.way();
  if (novel > cfg.num_proxies) {
    throw CapacityError(std::to_string(novel) + " novel classes but only " + std::to_string(cfg.num_proxies) +
                        " disentanglement proxies");
  }
}

/// Runs every session of `sessions` in order and evaluates after each one.
inline RunResult run_experiment(std::span<const SessionDataset> sessions, const TrainConfig& cfg,
                                const TrainHooks& hooks = {}) {
  check_runnable(sessions, cfg);
  RunResult out;
  std::vector<SessionReport> reports;
  out.state = run_base_session(sessions[0], cfg, hooks);
  reports.push_back(evaluate_session(out.state, sessions.first(1)));
  for (std::size_t t = 1; t < sessions.size(); ++t) {
    out.state = run_incremental_session(std::move(out.state), sessions[t], cfg, hooks);
    reports.push_back(evaluate_session(out.state, sessions.first(t + 1)));
  }
  out.report = make_run_report(std::move(reports));
  return out;
}

enum class Arm { Full, NoOpa, NoNN, NoNNBN, Direct, NoRd, NoBw };

inline constexpr std::array<Arm, 7> kAllArms = {Arm::Full, Arm::NoOpa,  Arm::NoNN, Arm::NoNNBN,
                                                Arm::Direct, Arm::NoRd, Arm::NoBw};

inline std::string_view arm_name(Arm a) {
  switch (a) {
    case Arm::Full: return "full";
    case Arm::NoOpa: return "wo_opa";
    case Arm::NoNN: return "dpdb_no_nn";
    case Arm::NoNNBN: return "dpdb_no_nn_bn";
    case Arm::Direct: return "dpdb_direct";
    case Arm::NoRd: return "wo_rd";
    case Arm::NoBw: return "wo_bw";
  }
  return "full";
}

inline TrainConfig apply_arm(TrainConfig cfg, Arm a) {
  switch (a) {
    case Arm::Full: break;
    case Arm::NoOpa: cfg.opa_enabled = false; break;
    case Arm::NoNN: cfg.dpdb_mode = DpdbMode::NoNN; break;
    case Arm::NoNNBN: cfg.dpdb_mode = DpdbMode::NoNNBN; break;
    case Arm::Direct: cfg.dpdb_mode = DpdbMode::Direct; break;
    case Arm::NoRd: cfg.rd_enabled = false; break;
    case Arm::NoBw: cfg.bw_enabled = false; break;
  }
  return cfg;
}

struct ArmResult {
  Arm arm = Arm::Full;
  RunResult run;
};

/// Runs the given arms on one dataset. Arms whose base training is identical
/// (same OPA switch, not Direct) reuse one trained base model; the results
/// are bit-identical to separate run_experiment calls.
inline std::vector<ArmResult> run_arms(std::span<const SessionDataset> sessions, const TrainConfig& cfg,
                                       std::span<const Arm> arms) {
  check_runnable(sessions, cfg);
  std::map<std::pair<bool, bool>, SessionState> trained;
  std::vector<ArmResult> out;
  for (Arm arm : arms) {
    const TrainConfig c = apply_arm(cfg, arm);
    const std::pair<bool, bool> key{c.opa_enabled, c.dpdb_mode == DpdbMode::Direct};
    auto it = trained.find(key);
    if (it == trained.end()) it = trained.emplace(key, train_base(sessions[0], c)).first;

    RunResult r;
    std::vector<SessionReport> reports;
    r.state = finish_base(it->second, sessions[0], c);
    reports.push_back(evaluate_session(r.state, sessions.first(1)));
    for (std::size_t t = 1; t < sessions.size(); ++t) {
      r.state = run_incremental_session(std::move(r.state), sessions[t], c);
      reports.push_back(evaluate_session(r.state, sessions.first(t + 1)));
    }
    r.report = make_run_report(std::move(reports));
    out.push_back({arm, std::move(r)});
  }
  return out;
}

}  // namespace fscil
