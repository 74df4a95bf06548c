// SPDX-License-Identifier: Apache-2.0
//
// fscil run | ablate | gradcheck | gen-data | export-relations
//
// Exit codes: 0 success, 1 check failure, 2 configuration or input error,
// 3 numeric or other runtime error. Logs go to stderr; stdout carries one
// result line.
#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "fscil/fscil.hpp"

namespace fs = std::filesystem;
using namespace fscil;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kInputError = 2, kRuntimeError = 3 };

void log(const std::string& msg) { std::cerr << "fscil: " << msg << '\n'; }

/// Writes into a sibling staging directory, then swaps it into place.
template <typename Fill>
void write_directory(const fs::path& out, Fill&& fill) {
  fs::path staging = out;
  staging += ".partial";
  fs::remove_all(staging);
  fs::create_directories(staging);
  fill(staging);
  fs::remove_all(out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  fs::rename(staging, out);
}

void write_run_outputs(const fs::path& dir, const ExperimentConfig& cfg, const RunResult& run) {
  write_file(dir / "report.json", [&](std::ostream& o) { o << report_json(cfg, run).dump(2) << '\n'; });
  write_file(dir / "relations.csv",
             [&](std::ostream& o) { write_relations_csv(o, run.state.replay.labels(), relation_matrix(run.state)); });
  write_file(dir / "proxies.csv", [&](std::ostream& o) { write_proxies_csv(o, run.state.proxies); });
  try {
    const Projection p = export_projection(run.state);
    write_file(dir / "projection.csv", [&](std::ostream& o) { write_projection_csv(o, p); });
  } catch (const ProjectionError& e) {
    log(std::string("projection.csv skipped: ") + e.what());
  }
  save_checkpoint(dir / "checkpoint.json", run.state);
}

int cmd_run(const fs::path& config, const fs::path& out) {
  const LoadedConfig lc = load_config(config);
  const auto sessions = sessions_for(lc.experiment);
  log("running " + std::to_string(sessions.size()) + " sessions, seed " + std::to_string(lc.experiment.seed()));
  const RunResult run = run_experiment(sessions, lc.experiment.train);
  for (const auto& s : run.report.sessions) {
    log("session " + std::to_string(s.session_id) + " accuracy " + format_double(s.accuracy()));
  }
  write_directory(out, [&](const fs::path& dir) { write_run_outputs(dir, lc.experiment, run); });
  std::cout << format_double_17(run.report.mean_accuracy) << '\n';
  return kOk;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || res.ec != std::errc() || res.ptr != item.data() + item.size()) {
      throw ConfigError("seeds", "invalid seed '" + item + "'");
    }
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  return seeds;
}

int cmd_ablate(const fs::path& config, const fs::path& out, const std::string& seed_list) {
  const LoadedConfig lc = load_config(config);
  const auto seeds = parse_seeds(seed_list);
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    ExperimentConfig cfg = lc.experiment;
    cfg.set_seed(seed);
    const auto sessions = sessions_for(cfg);
    log("ablation seed " + std::to_string(seed));
    for (auto& r : run_arms(sessions, cfg.train, kAllArms)) {
      log(std::string("  ") + std::string(arm_name(r.arm)) + " mean " + format_double(r.run.report.mean_accuracy));
      rows.push_back({r.arm, seed, std::move(r.run.report)});
    }
  }
  write_directory(out, [&](const fs::path& dir) {
    write_file(dir / "ablation.csv", [&](std::ostream& o) { write_ablation_csv(o, rows); });
    write_file(dir / "ablation_summary.csv", [&](std::ostream& o) { write_ablation_summary_csv(o, rows); });
  });
  double full = 0.0;
  for (const auto& r : rows) {
    if (r.arm == Arm::Full) full += r.report.mean_accuracy;
  }
  std::cout << format_double_17(full / static_cast<double>(seeds.size())) << '\n';
  return kOk;
}

std::optional<OpKind> parse_op(const std::string& name) {
  if (name.empty()) return std::nullopt;
  for (OpKind k : {OpKind::MatMul, OpKind::Add, OpKind::Scale, OpKind::Relu, OpKind::Cosine, OpKind::RowNorm,
                   OpKind::MeanRows, OpKind::SoftmaxCrossEntropy}) {
    if (op_name(k) == name) return k;
  }
  throw ConfigError("inject-fault", "unknown operator '" + name + "'");
}

int cmd_gradcheck(double tol, const std::string& fault) {
  GradSuiteOptions opt;
  opt.check.tol = tol;
  opt.check.inject_fault = parse_op(fault);
  bool ok = true;
  for (const auto& e : run_gradient_suite(opt)) {
    std::cerr << (e.passed ? "ok   " : "FAIL ") << e.name << "  instances " << e.instances << "  max rel err "
              << format_double(e.max_rel_error) << '\n';
    ok = ok && e.passed;
  }
  std::cout << (ok ? "gradcheck passed" : "gradcheck failed") << '\n';
  return ok ? kOk : kCheckFailed;
}

int cmd_gen_data(const fs::path& spec, const fs::path& out) {
  const LoadedConfig lc = load_config(spec);
  const auto sessions = gen_synthetic(lc.experiment.gen);
  write_directory(out, [&](const fs::path& dir) { save_dataset(dir, sessions, lc.options.feature_format); });
  std::cout << (out / "manifest.json").string() << '\n';
  return kOk;
}

int cmd_export_relations(const fs::path& checkpoint, const fs::path& out) {
  const SessionState state = load_checkpoint(checkpoint);
  const Tensor rel = relation_matrix(state);
  fs::create_directories(out);
  write_file(out / "relations.csv", [&](std::ostream& o) { write_relations_csv(o, state.replay.labels(), rel); });
  try {
    const Projection p = export_projection(state);
    write_file(out / "projection.csv", [&](std::ostream& o) { write_projection_csv(o, p); });
  } catch (const ProjectionError& e) {
    log(std::string("projection.csv skipped: ") + e.what());
  }
  std::cout << (out / "relations.csv").string() << '\n';
  return kOk;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const DataError*>(&e) || dynamic_cast<const ProtocolError*>(&e) ||
      dynamic_cast<const CapacityError*>(&e) || dynamic_cast<const InfeasibleError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return kInputError;
  }
  return kRuntimeError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Relation-disentangled few-shot class-incremental learning at desk scale"};
  app.require_subcommand(1);

  std::string config, out, seeds, fault, checkpoint;
  double tol = GradCheckOptions{}.tol;

  auto* run = app.add_subcommand("run", "train and evaluate every session");
  run->add_option("config", config, "configuration JSON")->required();
  run->add_option("out", out, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "run every ablation arm for each seed");
  ablate->add_option("config", config, "configuration JSON")->required();
  ablate->add_option("out", out, "output directory")->required();
  ablate->add_option("--seeds", seeds, "comma-separated seeds")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every operator and loss");
  grad->add_option("--tol", tol, "relative error tolerance");
  grad->add_option("--inject-fault", fault, "scale one operator's backward rule (test fixture)");

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset with a manifest");
  gen->add_option("spec", config, "configuration JSON")->required();
  gen->add_option("out", out, "output directory")->required();

  auto* rel = app.add_subcommand("export-relations", "relation matrix and projection from a checkpoint");
  rel->add_option("checkpoint", checkpoint, "checkpoint JSON")->required();
  rel->add_option("out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (*run) return cmd_run(config, out);
    if (*ablate) return cmd_ablate(config, out, seeds);
    if (*grad) return cmd_gradcheck(tol, fault);
    if (*gen) return cmd_gen_data(config, out);
    if (*rel) return cmd_export_relations(checkpoint, out);
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return exit_code_for(e);
  }
  return kOk;
}
