// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fscil/autodiff.hpp"

namespace fscil {

/// Builds a scalar loss from parameter leaves. Must be deterministic.
using GraphBuilder = std::function<Var(Graph&, std::span<const Var>)>;

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  bool passed = true;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& p : params) m = std::max(m, p.max_rel_error);
    return m;
  }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  std::optional<OpKind> inject_fault;  // see Graph::inject_backward_fault
};

/// Compares analytic gradients with central differences.
///
/// The error of one parameter tensor is max_i |a_i - n_i| / s, where
/// s = max(max_i |a_i|, max_i |n_i|, 1e-8) is the gradient scale of that
/// tensor. Normalizing by the tensor-wide scale keeps near-zero entries from
/// dominating through cancellation noise.
inline GradCheckReport check_gradients(const GraphBuilder& build, std::span<const Tensor> params,
                                       const GradCheckOptions& options = {},
                                       std::span<const std::string> names = {}) {
  if (!(options.step > 0.0)) throw Error("gradient check step must be positive");

  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    g.inject_backward_fault(options.inject_fault);
    std::vector<Var> vars;
    for (const Tensor& p : params) vars.push_back(g.parameter(p.detached()));
    Var loss = build(g, vars);
    if (!std::isfinite(scalar(loss))) throw NumericError("non-finite loss in gradient check");
    g.backward(loss);
    for (Var v : vars) analytic.emplace_back(v.grad().begin(), v.grad().end());
  }

  auto evaluate = [&](const std::vector<Tensor>& values) {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& p : values) vars.push_back(g.constant(p.detached()));
    const double v = scalar(build(g, vars));
    if (!std::isfinite(v)) throw NumericError("non-finite loss in gradient check");
    return v;
  };

  std::vector<Tensor> work;
  for (const Tensor& p : params) work.push_back(p.detached());

  GradCheckReport report;
  for (std::size_t pi = 0; pi < work.size(); ++pi) {
    std::vector<double> numeric(work[pi].size());
    for (std::size_t k = 0; k < work[pi].size(); ++k) {
      const double orig = work[pi].data()[k];
      work[pi].data()[k] = orig + options.step;
      const double plus = evaluate(work);
      work[pi].data()[k] = orig - options.step;
      const double minus = evaluate(work);
      work[pi].data()[k] = orig;
      numeric[k] = (plus - minus) / (2.0 * options.step);
    }
    double scale = 1e-8;
    double diff = 0.0;
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      scale = std::max({scale, std::abs(numeric[k]), std::abs(analytic[pi][k])});
      diff = std::max(diff, std::abs(numeric[k] - analytic[pi][k]));
    }
    ParamCheck check;
    check.name = pi < names.size() ? names[pi] : "param" + std::to_string(pi);
    check.max_rel_error = diff / scale;
    check.passed = check.max_rel_error <= options.tol;
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace fscil
