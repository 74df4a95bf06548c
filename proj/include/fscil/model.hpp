// SPDX-License-Identifier: Apache-2.0
//
// Backbone MLP, two-layer relation disentanglement controller and the
// cosine prototypical classifier over base classes.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fscil/autodiff.hpp"
#include "fscil/error.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct Dims {
  std::size_t input_dim = 32;         // D
  std::size_t backbone_hidden = 64;
  std::size_t backbone_hidden_layers = 2;
  std::size_t backbone_out = 64;      // d
  std::size_t controller_hidden = 256;
  std::size_t controller_out = 128;   // d'
  std::size_t base_classes = 10;      // |C0|, classifier rows
  bool identity_backbone = false;     // inputs are already backbone features

  friend bool operator==(const Dims&, const Dims&) = default;
};

/// y = x * weight + bias, weight is (in x out), bias is (1 x out).
struct Linear {
  Tensor weight;
  Tensor bias;
};

struct ModelParams {
  Dims dims;
  std::uint64_t seed = 0;
  std::vector<Linear> backbone;
  std::array<Linear, 2> controller;
  Tensor classifier;  // base_classes x controller_out, row c is w_c
  bool frozen_backbone = false;
  bool frozen_classifier = false;
};

inline void validate_dims(const Dims& dims) {
  if (dims.input_dim == 0 || dims.backbone_hidden == 0 || dims.backbone_out == 0 ||
      dims.controller_hidden == 0 || dims.controller_out == 0 || dims.base_classes == 0) {
    throw DimensionError("all model dimensions must be >= 1");
  }
}

inline Linear init_linear(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Linear layer{Tensor(fan_in, fan_out), Tensor(1, fan_out)};
  for (double& w : layer.weight.data()) w = dist(rng);
  return layer;
}

/// Fan-based uniform weights, zero biases; the classifier uses the same rule
/// with fan_in = d', fan_out = |C0|.
inline ModelParams init_params(const Dims& dims, std::uint64_t seed) {
  validate_dims(dims);
  Rng rng(derive_seed(seed, "init"));
  ModelParams p;
  p.dims = dims;
  p.seed = seed;
  if (dims.identity_backbone) {
    p.dims.backbone_out = dims.input_dim;
  } else {
    std::size_t in = dims.input_dim;
    for (std::size_t i = 0; i < dims.backbone_hidden_layers; ++i) {
      p.backbone.push_back(init_linear(in, dims.backbone_hidden, rng));
      in = dims.backbone_hidden;
    }
    p.backbone.push_back(init_linear(in, dims.backbone_out, rng));
  }
  p.controller[0] = init_linear(p.dims.backbone_out, dims.controller_hidden, rng);
  p.controller[1] = init_linear(dims.controller_hidden, dims.controller_out, rng);
  // drawn as (d' x |C0|) like a layer, stored one row per class
  const Tensor w = init_linear(dims.controller_out, dims.base_classes, rng).weight;
  p.classifier = Tensor(dims.base_classes, dims.controller_out);
  for (std::size_t i = 0; i < dims.controller_out; ++i) {
    for (std::size_t c = 0; c < dims.base_classes; ++c) p.classifier(c, i) = w(i, c);
  }
  return p;
}

/// Model tensors registered as leaves of one Graph.
struct BoundLinear {
  Var weight;
  Var bias;
};

struct BoundModel {
  std::vector<BoundLinear> backbone;
  std::array<BoundLinear, 2> controller;
  Var classifier;
};

struct Trainable {
  bool backbone = true;
  bool controller = true;
  bool classifier = true;
};

/// Registers every tensor of `p` in `g`. Frozen parts (either by the flags in
/// `p` or by `which`) become constants and receive no gradient.
inline BoundModel bind(Graph& g, const ModelParams& p, Trainable which = {}) {
  auto leaf = [&g](const Tensor& t, bool train) {
    return train ? g.parameter(t.detached()) : g.constant(t.detached());
  };
  const bool bb = which.backbone && !p.frozen_backbone;
  const bool cls = which.classifier && !p.frozen_classifier;
  BoundModel m;
  for (const Linear& l : p.backbone) m.backbone.push_back({leaf(l.weight, bb), leaf(l.bias, bb)});
  for (std::size_t i = 0; i < 2; ++i) {
    m.controller[i] = {leaf(p.controller[i].weight, which.controller),
                       leaf(p.controller[i].bias, which.controller)};
  }
  m.classifier = leaf(p.classifier, cls);
  return m;
}

inline Var apply_linear(Var x, const BoundLinear& l) {
  return add(matmul(x, l.weight), l.bias);
}

/// h = backbone(x); every layer, including the last, is followed by relu.
/// With no layers (identity backbone) h = x.
inline Var encode_backbone(Var x, const BoundModel& m) {
  Var h = x;
  for (const BoundLinear& l : m.backbone) h = relu(apply_linear(h, l));
  return h;
}

/// e = W2 relu(W1 h + b1) + b2.
inline Var encode_controller(Var h, const BoundModel& m) {
  return apply_linear(relu(apply_linear(h, m.controller[0])), m.controller[1]);
}

inline void check_input_width(const Tensor& x, std::size_t width, const char* what) {
  if (x.cols() != width) {
    throw DimensionError(std::string(what) + " expects " + std::to_string(width) +
                         " columns, got " + shape_string(x));
  }
}

/// Forward-only evaluation helpers.
inline Tensor encode_backbone(const Tensor& x, const ModelParams& p) {
  check_input_width(x, p.dims.input_dim, "backbone");
  Graph g;
  BoundModel m = bind(g, p, {false, false, false});
  return encode_backbone(g.constant(x.detached()), m).value().detached();
}

inline Tensor encode_controller(const Tensor& h, const ModelParams& p) {
  check_input_width(h, p.dims.backbone_out, "controller");
  Graph g;
  BoundModel m = bind(g, p, {false, false, false});
  return encode_controller(g.constant(h.detached()), m).value().detached();
}

/// Every tensor of the model in a fixed order (backbone, controller, classifier).
inline std::vector<Tensor*> parameter_list(ModelParams& p) {
  std::vector<Tensor*> out;
  for (Linear& l : p.backbone) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  for (Linear& l : p.controller) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&p.classifier);
  return out;
}

inline std::vector<Var> parameter_list(const BoundModel& m) {
  std::vector<Var> out;
  for (const BoundLinear& l : m.backbone) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  for (const BoundLinear& l : m.controller) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  out.push_back(m.classifier);
  return out;
}

/// Plain SGD with optional momentum. Tensors whose bound leaf carries no
/// gradient are left untouched, so frozen parts stay bit-identical.
class Sgd {
 public:
  Sgd(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {}

  void step(std::span<Tensor* const> params, std::span<const Var> bound) {
    if (params.size() != bound.size()) throw DimensionError("sgd parameter/leaf count mismatch");
    if (velocity_.size() != params.size()) velocity_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto grad = bound[i].grad();
      if (grad.empty()) continue;
      auto w = params[i]->data();
      if (momentum_ == 0.0) {
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr_ * grad[k];
        continue;
      }
      auto& vel = velocity_[i];
      if (vel.size() != w.size()) vel.assign(w.size(), 0.0);
      for (std::size_t k = 0; k < w.size(); ++k) {
        vel[k] = momentum_ * vel[k] + grad[k];
        w[k] -= lr_ * vel[k];
      }
    }
  }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace fscil
