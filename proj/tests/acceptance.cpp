// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
// if any fails. Pass criterion numbers as arguments to run a subset.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fscil/fscil.hpp"
#include "oracle.hpp"

using namespace fscil;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr std::size_t kGradInstances = 20;
constexpr double kOracleTol = 1e-12;
constexpr int kOracleInstances = 100;
constexpr double kGramTol = 1e-9;
constexpr double kProxyCosMax = 0.05;
constexpr double kSeparableMin = 0.90;
constexpr int kAblationSeeds = 5;
constexpr double kAblationRho = 0.7;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

ExperimentConfig desk(std::uint64_t seed) {
  ExperimentConfig c;
  c.set_seed(seed);
  return c;
}

Outcome gradient_suite() {
  GradSuiteOptions opt;
  opt.instances = kGradInstances;
  opt.check.tol = kGradTol;
  opt.check.step = kGradStep;
  Outcome o{true, ""};
  double worst = 0;
  std::set<std::string> seen;
  for (const auto& e : run_gradient_suite(opt)) {
    o.pass = o.pass && e.passed && e.instances >= kGradInstances;
    worst = std::max(worst, e.max_rel_error);
    seen.insert(e.name);
    if (!e.passed) o.detail += e.name + " failed; ";
  }
  for (const char* loss : {"loss_ce", "loss_ac", "loss_base", "loss_db", "loss_rd"}) {
    if (seen.count(loss) == 0) {
      o.pass = false;
      o.detail += std::string(loss) + " missing; ";
    }
  }
  o.detail += std::to_string(seen.size()) + " entries, max rel err " + format_double(worst);
  return o;
}

Outcome oracle_suite() {
  std::mt19937_64 rng(2025);
  double worst = 0;
  std::size_t argmax_mismatch = 0;
  for (int trial = 0; trial < kOracleInstances; ++trial) {
    const std::size_t n = oracle::draw(rng, 1, 32), m = oracle::draw(rng, 2, 16), d = oracle::draw(rng, 2, 16);
    const Tensor e = oracle::gaussian(rng, n, d), w = oracle::gaussian(rng, m, d);
    const auto y = oracle::labels(rng, n, m);
    const auto em = oracle::to_matrix(e), wm = oracle::to_matrix(w);
    {
      Graph g;
      worst = std::max(worst, std::abs(scalar(loss_ce(cosine_logits(g.constant(e), g.constant(w)), y)) -
                                       oracle::ce(em, wm, y)));
    }
    const Tensor s = oracle::gaussian(rng, m, d);
    worst = std::max(worst, std::abs(loss_ac(w, s) - oracle::ac(wm, oracle::to_matrix(s))));

    const std::size_t nd = oracle::draw(rng, 1, 16);
    const Tensor b = oracle::gaussian(rng, nd, d);
    const auto bm = oracle::to_matrix(b);
    worst = std::max(worst, std::abs(eval_L_db(s, b) - oracle::db(oracle::to_matrix(s), bm)));

    const std::size_t c = oracle::draw(rng, 1, m);
    const Tensor wc = head_rows(w, c);
    const auto yr = oracle::labels(rng, n, c + nd);
    const bool balance = trial % 2 == 0;
    worst = std::max(worst, std::abs(loss_rd(LabeledBatch{e, yr, {}}, wc, b, c, balance) -
                                     oracle::rd(em, yr, oracle::to_matrix(wc), bm, balance)));

    const Tensor p = predict(e, w);
    const auto want = oracle::predict(em, wm);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) worst = std::max(worst, std::abs(p(i, j) - want[i][j]));
    }
    const auto labels = oracle::argmax_rows(want);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < m; ++j) {
        if (p(i, j) > p(i, best)) best = j;
      }
      argmax_mismatch += static_cast<int>(best) != labels[i] ? 1 : 0;
    }
  }
  return {worst <= kOracleTol && argmax_mismatch == 0,
          std::to_string(kOracleInstances) + " instances x 5 functions, max abs diff " + format_double(worst) +
              ", argmax mismatches " + std::to_string(argmax_mismatch)};
}

Outcome proxy_geometry() {
  double gram_err = 0;
  const Tensor q = gen_orthogonal(4, 16, 11);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      gram_err = std::max(gram_err, std::abs(dot(q.row(i), q.row(j)) - (i == j ? 1.0 : 0.0)));
    }
  }
  DisentanglementOptions opt;
  opt.steps = 500;
  opt.seed = 12;
  const auto r = optimize_disentanglement(q, 4, opt);
  const ProxyCorrelation pc = proxy_correlation(q, r.beta);
  const bool pass = gram_err <= kGramTol && pc.max_base_novel <= kProxyCosMax &&
                    pc.max_novel_novel <= kProxyCosMax && r.loss_trace.back() <= r.loss_trace.front();
  return {pass, "gram err " + format_double(gram_err) + ", max cross cos " + fmt(pc.max_base_novel) +
                    ", max inter cos " + fmt(pc.max_novel_novel) + ", L_db " + fmt(r.loss_trace.front()) + " -> " +
                    fmt(r.loss_trace.back())};
}

// One desk run shared by criteria 4, 7 and 8.
struct DeskRun {
  ExperimentConfig cfg = desk(1);
  std::vector<SessionDataset> sessions;
  SessionState state;
  bool backbone_frozen = true;
  std::size_t steps = 0;
  std::size_t gamma_mismatch = 0;
  std::vector<std::size_t> head_sizes;
};

const DeskRun& desk_run() {
  static const DeskRun run = [] {
    DeskRun d;
    d.sessions = gen_synthetic(d.cfg.gen);
    check_runnable(d.sessions, d.cfg.train);
    d.state = run_base_session(d.sessions[0], d.cfg.train);
    d.head_sizes.push_back(d.state.head().rows());
    const std::vector<Linear> frozen = d.state.params.backbone;
    TrainHooks hooks;
    hooks.on_incremental_step = [&](const IncrementalStep& st) {
      ++d.steps;
      for (std::size_t i = 0; i < frozen.size(); ++i) {
        d.backbone_frozen = d.backbone_frozen && bitwise_equal(st.params->backbone[i].weight, frozen[i].weight) &&
                            bitwise_equal(st.params->backbone[i].bias, frozen[i].bias);
      }
      std::map<int, std::size_t> counts;
      for (int y : st.labels) ++counts[y];
      for (std::size_t i = 0; i < st.labels.size(); ++i) {
        const double n = static_cast<double>(st.labels.size());
        if (st.gamma[i] * n != static_cast<double>(counts[st.labels[i]])) ++d.gamma_mismatch;
      }
    };
    for (std::size_t t = 1; t < d.sessions.size(); ++t) {
      d.state = run_incremental_session(std::move(d.state), d.sessions[t], d.cfg.train, hooks);
      d.head_sizes.push_back(d.state.head().rows());
    }
    return d;
  }();
  return run;
}

Outcome protocol_invariants() {
  const DeskRun& d = desk_run();
  std::vector<std::size_t> expected;
  std::size_t total = 0;
  for (const auto& ds : d.sessions) expected.push_back(total += ds.way());
  const bool heads_ok = d.head_sizes == expected;

  bool disjoint_ok = false;
  auto overlapping = d.sessions;
  overlapping[2].classes = overlapping[1].classes;
  for (auto* recs : {&overlapping[2].train, &overlapping[2].test}) {
    for (std::size_t i = 0; i < recs->size(); ++i) (*recs)[i].label = overlapping[1].classes[i % 5];
  }
  try {
    check_runnable(overlapping, d.cfg.train);
  } catch (const ProtocolError&) {
    disjoint_ok = true;
  }
  try {
    run_incremental_session(d.state, d.sessions[1], d.cfg.train);
    disjoint_ok = false;
  } catch (const ProtocolError&) {
  }

  const RunResult again = run_experiment(d.sessions, d.cfg.train);
  const bool deterministic = checkpoint_json(again.state).dump() == checkpoint_json(d.state).dump();

  const bool pass = d.backbone_frozen && d.steps > 0 && heads_ok && disjoint_ok && deterministic;
  std::string sizes;
  for (std::size_t s : d.head_sizes) sizes += (sizes.empty() ? "" : ",") + std::to_string(s);
  return {pass, std::string("backbone frozen over ") + std::to_string(d.steps) + " steps: " +
                    (d.backbone_frozen ? "yes" : "no") + "; head sizes " + sizes + "; disjoint labels enforced: " +
                    (disjoint_ok ? "yes" : "no") + "; bit-deterministic: " + (deterministic ? "yes" : "no")};
}

Outcome separable_sanity() {
  ExperimentConfig c = desk(1);
  c.gen.cluster_spread = 0.05;
  c.gen.confound_strength = 0.0;
  const RunResult r = run_experiment(gen_synthetic(c.gen), c.train);
  std::string per;
  for (const auto& s : r.report.sessions) per += (per.empty() ? "" : " ") + fmt(s.accuracy(), 3);
  return {r.report.mean_accuracy >= kSeparableMin,
          "mean-of-sessions accuracy " + fmt(r.report.mean_accuracy) + " (sessions " + per + ")"};
}

Outcome ablation_directionality() {
  std::map<Arm, double> mean;
  double rel_rd = 0, rel_nord = 0;
  for (int seed = 1; seed <= kAblationSeeds; ++seed) {
    ExperimentConfig c = desk(static_cast<std::uint64_t>(seed));
    c.gen.confound_strength = kAblationRho;
    const auto sessions = gen_synthetic(c.gen);
    for (const auto& r : run_arms(sessions, c.train, kAllArms)) {
      mean[r.arm] += r.run.report.mean_accuracy / kAblationSeeds;
      const double rel = mean_abs_base_novel(relation_matrix(r.run.state), r.run.state.base_count());
      if (r.arm == Arm::Full) rel_rd += rel / kAblationSeeds;
      if (r.arm == Arm::NoRd) rel_nord += rel / kAblationSeeds;
    }
  }
  bool pass = rel_rd < rel_nord;
  std::string detail;
  for (Arm a : kAllArms) {
    detail += std::string(arm_name(a)) + "=" + fmt(mean[a]) + " ";
    if (a != Arm::Full && mean[Arm::Full] < mean[a]) pass = false;
  }
  detail += "| mean |base-novel| relation: RD " + fmt(rel_rd) + ", w/o RD " + fmt(rel_nord);
  return {pass, detail};
}

Outcome balance_weights_exact() {
  const DeskRun& d = desk_run();
  return {d.steps > 0 && d.gamma_mismatch == 0,
          std::to_string(d.steps) + " batches checked, " + std::to_string(d.gamma_mismatch) + " mismatching rows"};
}

Outcome format_round_trips() {
  const DeskRun& d = desk_run();
  const fs::path dir = fs::temp_directory_path() / "fscil_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  save_checkpoint(dir / "checkpoint.json", d.state);
  const SessionState back = load_checkpoint(dir / "checkpoint.json");
  const bool ckpt_ok = checkpoint_json(back).dump() == checkpoint_json(d.state).dump();

  save_dataset(dir / "features", d.sessions, FeatureFormat::Binary);
  const LoadedFeatures lf = load_features(dir / "features" / "manifest.json");
  bool bin_ok = lf.sessions.size() == d.sessions.size();
  for (std::size_t t = 0; bin_ok && t < d.sessions.size(); ++t) {
    bin_ok = lf.sessions[t].train == d.sessions[t].train && lf.sessions[t].test == d.sessions[t].test;
  }

  write_file(dir / "relations.csv",
             [&](std::ostream& o) { write_relations_csv(o, d.state.replay.labels(), relation_matrix(d.state)); });
  std::ifstream in(dir / "relations.csv");
  const LabeledMatrix m = read_relations_csv(in);
  bool rel_ok = m.values.rows() == d.state.replay.size();
  for (std::size_t i = 0; rel_ok && i < m.values.rows(); ++i) {
    rel_ok = m.values(i, i) == 1.0;
    for (std::size_t j = 0; rel_ok && j < i; ++j) rel_ok = m.values(i, j) == m.values(j, i);
  }
  fs::remove_all(dir);
  return {ckpt_ok && bin_ok && rel_ok, std::string("checkpoint bit-exact: ") + (ckpt_ok ? "yes" : "no") +
                                           "; binary features bit-exact: " + (bin_ok ? "yes" : "no") +
                                           "; relations.csv symmetric unit-diagonal: " + (rel_ok ? "yes" : "no")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> check;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient suite", 30, gradient_suite},
      {2, "oracle suite", 10, oracle_suite},
      {3, "proxy geometry", 5, proxy_geometry},
      {4, "protocol invariants", 120, protocol_invariants},
      {5, "separable-data sanity", 120, separable_sanity},
      {6, "ablation directionality", 900, ablation_directionality},
      {7, "balance weights", 120, balance_weights_exact},
      {8, "format round-trips", 120, format_round_trips},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && only.count(c.id) == 0) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_s) {
      o.pass = false;
      o.detail += "; over time budget";
    }
    failures += o.pass ? 0 : 1;
    std::printf("criterion %d %s: %s  %s  [%.1fs, budget %.0fs]\n", c.id, c.name, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs, c.budget_s);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
