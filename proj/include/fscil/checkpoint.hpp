// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint files: a JSON object holding dims, seed and every tensor of a
// SessionState as base64 of its little-endian float64 payload, so that a
// save/load cycle reproduces every bit.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "fscil/error.hpp"
#include "fscil/protocol.hpp"

namespace fscil {

namespace detail {

inline constexpr std::string_view kBase64Alphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

inline std::string base64_encode(std::span<const unsigned char> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    for (int s = 18; s >= 0; s -= 6) out.push_back(kBase64Alphabet[(v >> s) & 63]);
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    std::uint32_t v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out.push_back(kBase64Alphabet[(v >> 18) & 63]);
    out.push_back(kBase64Alphabet[(v >> 12) & 63]);
    out.push_back(rest == 2 ? kBase64Alphabet[(v >> 6) & 63] : '=');
    out.push_back('=');
  }
  return out;
}

inline std::vector<unsigned char> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw ParseError("base64 length is not a multiple of 4");
  std::array<int, 256> lookup;
  lookup.fill(-1);
  for (std::size_t k = 0; k < kBase64Alphabet.size(); ++k) {
    lookup[static_cast<unsigned char>(kBase64Alphabet[k])] = static_cast<int>(k);
  }
  std::vector<unsigned char> out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t v = 0;
    int pad = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      const char ch = text[i + k];
      if (ch == '=' && i + 4 == text.size() && k >= 2) {
        ++pad;
        v <<= 6;
        continue;
      }
      const int d = lookup[static_cast<unsigned char>(ch)];
      if (d < 0 || pad > 0) throw ParseError(std::string("invalid base64 character '") + ch + "'");
      v = (v << 6) | static_cast<std::uint32_t>(d);
    }
    out.push_back(static_cast<unsigned char>(v >> 16));
    if (pad < 2) out.push_back(static_cast<unsigned char>((v >> 8) & 255));
    if (pad < 1) out.push_back(static_cast<unsigned char>(v & 255));
  }
  return out;
}

inline std::string encode_doubles(std::span<const double> values) {
  std::vector<unsigned char> bytes(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (std::size_t b = 0; b < 8; ++b) bytes[i * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return base64_encode(bytes);
}

inline std::vector<double> decode_doubles(std::string_view text) {
  const auto bytes = base64_decode(text);
  if (bytes.size() % 8 != 0) throw ParseError("payload is not a whole number of float64 values");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

inline nlohmann::json tensor_json(const std::string& name, const Tensor& t) {
  return {{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}, {"data", encode_doubles(t.data())}};
}

inline Tensor tensor_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  std::vector<double> data = decode_doubles(j.at("data").get<std::string>());
  if (data.size() != rows * cols) {
    throw ParseError("tensor '" + j.value("name", std::string("?")) + "' payload has " +
                     std::to_string(data.size()) + " values, expected " + std::to_string(rows * cols));
  }
  return Tensor(rows, cols, std::move(data));
}

}  // namespace detail

inline constexpr std::string_view kCheckpointFormat = "fscil-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json dims_json(const Dims& d) {
  return {{"input_dim", d.input_dim},
          {"backbone_hidden", d.backbone_hidden},
          {"backbone_hidden_layers", d.backbone_hidden_layers},
          {"backbone_out", d.backbone_out},
          {"controller_hidden", d.controller_hidden},
          {"controller_out", d.controller_out},
          {"base_classes", d.base_classes},
          {"identity_backbone", d.identity_backbone}};
}

inline Dims dims_from_json(const nlohmann::json& j) {
  Dims d;
  d.input_dim = j.at("input_dim").get<std::size_t>();
  d.backbone_hidden = j.at("backbone_hidden").get<std::size_t>();
  d.backbone_hidden_layers = j.at("backbone_hidden_layers").get<std::size_t>();
  d.backbone_out = j.at("backbone_out").get<std::size_t>();
  d.controller_hidden = j.at("controller_hidden").get<std::size_t>();
  d.controller_out = j.at("controller_out").get<std::size_t>();
  d.base_classes = j.at("base_classes").get<std::size_t>();
  d.identity_backbone = j.at("identity_backbone").get<bool>();
  return d;
}

inline nlohmann::json checkpoint_json(const SessionState& s) {
  using detail::tensor_json;
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < s.params.backbone.size(); ++i) {
    const std::string p = "backbone." + std::to_string(i);
    layers.push_back(tensor_json(p + ".weight", s.params.backbone[i].weight));
    layers.push_back(tensor_json(p + ".bias", s.params.backbone[i].bias));
  }
  for (std::size_t i = 0; i < 2; ++i) {
    const std::string p = "controller." + std::to_string(i);
    layers.push_back(tensor_json(p + ".weight", s.params.controller[i].weight));
    layers.push_back(tensor_json(p + ".bias", s.params.controller[i].bias));
  }
  layers.push_back(tensor_json("classifier", s.params.classifier));

  nlohmann::json replay = nlohmann::json::array();
  for (int label : s.replay.labels()) {
    replay.push_back({{"label", label},
                      {"session", s.replay.session_of(label)},
                      {"mean", detail::encode_doubles(s.replay.mean(label))}});
  }
  nlohmann::json sessions = nlohmann::json::array();
  for (const auto& r : s.sessions) {
    sessions.push_back({{"session_id", r.session_id}, {"first_label", r.first_label}, {"count", r.count}});
  }
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"dims", dims_json(s.params.dims)},
          {"seed", s.params.seed},
          {"frozen_backbone", s.params.frozen_backbone},
          {"frozen_classifier", s.params.frozen_classifier},
          {"layers", layers},
          {"proxies",
           {{"orthogonal", tensor_json("orthogonal", s.proxies.orthogonal)},
            {"disentangle", tensor_json("disentangle", s.proxies.disentangle)},
            {"assigned_count", s.proxies.assigned_count}}},
          {"replay", replay},
          {"sessions", sessions},
          {"proxy_trace", detail::encode_doubles(s.proxy_trace)}};
}

inline SessionState checkpoint_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ParseError("not a checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion) throw ParseError("unsupported checkpoint version");
    SessionState s;
    s.params.dims = dims_from_json(j.at("dims"));
    s.params.seed = j.at("seed").get<std::uint64_t>();
    s.params.frozen_backbone = j.at("frozen_backbone").get<bool>();
    s.params.frozen_classifier = j.at("frozen_classifier").get<bool>();

    const auto& layers = j.at("layers");
    // backbone weight/bias pairs, then two controller pairs and the classifier
    if (layers.size() < 5 || (layers.size() - 5) % 2 != 0) throw ParseError("unexpected layer count");
    const std::size_t backbone_layers = (layers.size() - 5) / 2;
    std::size_t k = 0;
    auto next = [&](std::string_view expected) {
      const auto& l = layers.at(k++);
      if (l.at("name").get<std::string>() != expected) {
        throw ParseError("layer " + std::to_string(k - 1) + " should be '" + std::string(expected) + "'");
      }
      return detail::tensor_from_json(l);
    };
    for (std::size_t i = 0; i < backbone_layers; ++i) {
      const std::string p = "backbone." + std::to_string(i);
      Linear l;
      l.weight = next(p + ".weight");
      l.bias = next(p + ".bias");
      s.params.backbone.push_back(std::move(l));
    }
    for (std::size_t i = 0; i < 2; ++i) {
      const std::string p = "controller." + std::to_string(i);
      s.params.controller[i].weight = next(p + ".weight");
      s.params.controller[i].bias = next(p + ".bias");
    }
    s.params.classifier = next("classifier");

    const auto& px = j.at("proxies");
    s.proxies.orthogonal = detail::tensor_from_json(px.at("orthogonal"));
    s.proxies.disentangle = detail::tensor_from_json(px.at("disentangle"));
    s.proxies.assigned_count = px.at("assigned_count").get<std::size_t>();
    if (s.proxies.assigned_count > s.proxies.disentangle.rows()) throw ParseError("assigned_count exceeds N_d");

    for (const auto& r : j.at("replay")) {
      s.replay.add(r.at("label").get<int>(), detail::decode_doubles(r.at("mean").get<std::string>()),
                   r.at("session").get<std::size_t>());
    }
    for (const auto& r : j.at("sessions")) {
      s.sessions.push_back({r.at("session_id").get<std::size_t>(), r.at("first_label").get<int>(),
                            r.at("count").get<std::size_t>()});
    }
    s.proxy_trace = detail::decode_doubles(j.at("proxy_trace").get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const ProtocolError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const SessionState& s) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << checkpoint_json(s).dump(1) << '\n';
}

inline SessionState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace fscil
