// SPDX-License-Identifier: Apache-2.0
//
// Run artifacts: report.json, relations.csv, projection.csv, proxies.csv
// and the ablation tables. CSV reals use 17 significant digits.
#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "fscil/config.hpp"
#include "fscil/error.hpp"
#include "fscil/experiment.hpp"
#include "fscil/feature_io.hpp"
#include "fscil/metrics.hpp"
#include "fscil/proxies.hpp"

namespace fscil {

inline nlohmann::json optional_json(std::optional<double> v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json session_json(const SessionReport& s) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& [label, t] : s.per_class) {
    per_class.push_back({{"class", label}, {"correct", t.correct}, {"total", t.total}});
  }
  return {{"session", s.session_id},
          {"accuracy", s.accuracy()},
          {"base_accuracy", optional_json(s.base_accuracy())},
          {"novel_accuracy", optional_json(s.novel_accuracy())},
          {"correct", s.overall.correct},
          {"total", s.overall.total},
          {"per_class", per_class},
          {"max_base_novel_cos", s.max_base_novel_cos},
          {"max_novel_novel_cos", s.max_novel_novel_cos},
          {"degenerate", s.degenerate}};
}

inline nlohmann::json report_json(const ExperimentConfig& cfg, const RunResult& run) {
  nlohmann::json sessions = nlohmann::json::array();
  for (const auto& s : run.report.sessions) sessions.push_back(session_json(s));
  const ProxyCorrelation pc = proxy_correlation(run.state.proxies.orthogonal, run.state.proxies.disentangle);
  const Tensor relations = relation_matrix(run.state);
  nlohmann::json j = {{"config", config_json(cfg)},
                      {"seed", cfg.seed()},
                      {"sessions", sessions},
                      {"mean_accuracy", run.report.mean_accuracy},
                      {"performance_drop", run.report.performance_drop},
                      {"proxy_correlation",
                       {{"max_base_novel", pc.max_base_novel},
                        {"max_novel_novel", pc.max_novel_novel},
                        {"final_loss", run.state.proxy_trace.empty() ? nlohmann::json(nullptr)
                                                                     : nlohmann::json(run.state.proxy_trace.back())}}},
                      {"relations", {{"mean_pairwise_cosine", mean_pairwise_cosine(relations)}}}};
  if (relations.rows() > run.state.base_count()) {
    j["relations"]["mean_abs_base_novel"] = mean_abs_base_novel(relations, run.state.base_count());
  }
  return j;
}

/// m x m matrix with a class-id header row and a class-id leading column.
inline void write_relations_csv(std::ostream& out, std::span<const int> labels, const Tensor& m) {
  if (m.rows() != labels.size() || m.cols() != labels.size()) {
    throw DimensionError("relation matrix " + shape_string(m) + " for " + std::to_string(labels.size()) + " labels");
  }
  out << "class";
  for (int l : labels) out << ',' << l;
  out << '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    out << labels[i];
    for (std::size_t j = 0; j < m.cols(); ++j) out << ',' << format_double_17(m(i, j));
    out << '\n';
  }
}

struct LabeledMatrix {
  std::vector<int> labels;
  Tensor values;
};

inline int parse_label(std::string_view text, std::size_t line) {
  int v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ParseError("invalid class id '" + std::string(text) + "'", line);
  }
  return v;
}

inline LabeledMatrix read_relations_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  const auto header = split_fields(line);
  if (header.empty() || header.front() != "class") throw ParseError("header must start with 'class'", 1);
  LabeledMatrix out;
  for (std::size_t k = 1; k < header.size(); ++k) out.labels.push_back(parse_label(header[k], 1));
  const std::size_t m = out.labels.size();
  out.values = Tensor(m, m);
  std::size_t row = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != m + 1) throw ParseError("expected " + std::to_string(m + 1) + " fields", line_no);
    if (row >= m) throw ParseError("more rows than header columns", line_no);
    if (parse_label(fields[0], line_no) != out.labels[row]) {
      throw ParseError("row class id does not match the header order", line_no);
    }
    for (std::size_t j = 0; j < m; ++j) out.values(row, j) = parse_double(fields[j + 1], line_no);
    ++row;
  }
  if (row != m) throw ParseError("expected " + std::to_string(m) + " rows, found " + std::to_string(row), line_no);
  return out;
}

inline void write_projection_csv(std::ostream& out, const Projection& p) {
  out << "class,x,y\n";
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    out << p.labels[i] << ',' << format_double_17(p.coords(i, 0)) << ',' << format_double_17(p.coords(i, 1)) << '\n';
  }
}

inline void write_proxies_csv(std::ostream& out, const ProxySet& proxies) {
  const std::size_t d = proxies.orthogonal.cols();
  out << "kind,index";
  for (std::size_t k = 0; k < d; ++k) out << ",v" << k;
  out << '\n';
  auto rows = [&](const char* kind, const Tensor& t) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
      out << kind << ',' << i;
      for (double v : t.row(i)) out << ',' << format_double_17(v);
      out << '\n';
    }
  };
  rows("ortho", proxies.orthogonal);
  rows("beta", proxies.disentangle);
}

struct AblationRow {
  Arm arm = Arm::Full;
  std::uint64_t seed = 0;
  RunReport report;
};

inline std::string optional_csv(std::optional<double> v) { return v ? format_double_17(*v) : ""; }

/// One row per (arm, seed, session).
inline void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
  out << "arm,seed,session,accuracy,base_accuracy,novel_accuracy,run_mean\n";
  for (const auto& r : rows) {
    for (const auto& s : r.report.sessions) {
      out << arm_name(r.arm) << ',' << r.seed << ',' << s.session_id << ',' << format_double_17(s.accuracy()) << ','
          << optional_csv(s.base_accuracy()) << ',' << optional_csv(s.novel_accuracy()) << ','
          << format_double_17(r.report.mean_accuracy) << '\n';
    }
  }
}

/// Seed-averaged mean-of-sessions accuracy per arm, in first-seen arm order.
inline void write_ablation_summary_csv(std::ostream& out, std::span<const AblationRow> rows) {
  std::vector<Arm> order;
  std::map<Arm, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    if (acc.find(r.arm) == acc.end()) order.push_back(r.arm);
    acc[r.arm].first += r.report.mean_accuracy;
    ++acc[r.arm].second;
  }
  out << "arm,seeds,mean_accuracy\n";
  for (Arm a : order) {
    const auto [sum, n] = acc[a];
    out << arm_name(a) << ',' << n << ',' << format_double_17(sum / static_cast<double>(n)) << '\n';
  }
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  writer(out);
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace fscil
