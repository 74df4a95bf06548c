// SPDX-License-Identifier: Apache-2.0
//
// Session datasets, a synthetic generator with controllable base/novel
// confounding, and N-way K-shot splitting.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fscil/error.hpp"
#include "fscil/proxies.hpp"
#include "fscil/rng.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

struct Record {
  std::vector<double> features;
  int label = 0;

  friend bool operator==(const Record&, const Record&) = default;
};

struct SessionDataset {
  std::size_t session_id = 0;
  std::vector<int> classes;  // sorted global labels
  std::size_t shot = 0;      // training records per class (t >= 1)
  std::vector<Record> train;
  std::vector<Record> test;

  std::size_t dim() const {
    if (!train.empty()) return train.front().features.size();
    if (!test.empty()) return test.front().features.size();
    return 0;
  }
  std::size_t way() const { return classes.size(); }
};

struct GenSpec {
  std::size_t input_dim = 32;
  std::vector<std::size_t> classes_per_session{10, 5, 5, 5, 5};
  std::size_t shot = 5;
  std::size_t base_train_per_class = 100;
  std::size_t test_per_class = 20;
  double cluster_spread = 0.1;     // sigma
  double confound_strength = 0.0;  // rho in [0, 1)
  std::uint64_t seed = 0;

  std::size_t total_classes() const {
    return std::accumulate(classes_per_session.begin(), classes_per_session.end(), std::size_t{0});
  }
};

inline void validate(const GenSpec& spec) {
  if (spec.input_dim == 0) throw DataError("input_dim must be >= 1");
  if (spec.classes_per_session.empty() || spec.classes_per_session.front() == 0) {
    throw DataError("the base session needs at least one class");
  }
  if (!(spec.confound_strength >= 0.0 && spec.confound_strength < 1.0)) {
    throw DataError("confound_strength must lie in [0, 1)");
  }
  if (!(spec.cluster_spread >= 0.0)) throw DataError("cluster_spread must be >= 0");
  if (spec.base_train_per_class < 20 * spec.shot) {
    throw DataError("base session needs at least 20*shot training records per class");
  }
}

/// Unit class means. Base and "fresh" novel directions are mutually
/// orthonormal while the dimension allows it; novel class j is then
/// sqrt(1 - rho^2) * fresh_j + rho * base_{j mod |C0|}, so its cosine with its
/// designated base mean is exactly rho.
inline std::vector<std::vector<double>> class_means(const GenSpec& spec) {
  validate(spec);
  const std::size_t total = spec.total_classes();
  const std::size_t base = spec.classes_per_session.front();
  const std::size_t dim = spec.input_dim;
  const Tensor ortho = gen_orthogonal(std::min(total, dim), dim, derive_seed(spec.seed, "means"));
  Rng rng(derive_seed(spec.seed, "extra-means"));

  std::vector<std::vector<double>> means(total);
  for (std::size_t c = 0; c < total; ++c) {
    std::vector<double> dir;
    if (c < ortho.rows()) {
      dir.assign(ortho.row(c).begin(), ortho.row(c).end());
    } else {
      // out of orthogonal room: random direction, kept orthogonal to the base
      // means when possible
      dir = gaussian_vector(rng, dim);
      if (base < dim) {
        for (std::size_t b = 0; b < base; ++b) {
          const double p = dot(dir, ortho.row(b));
          for (std::size_t k = 0; k < dim; ++k) dir[k] -= p * ortho(b, k);
        }
      }
      const double n = norm2(dir);
      for (double& x : dir) x /= n;
    }
    if (c >= base && spec.confound_strength > 0.0) {
      const double rho = spec.confound_strength;
      const double keep = std::sqrt(1.0 - rho * rho);
      const auto& anchor = means[(c - base) % base];
      for (std::size_t k = 0; k < dim; ++k) dir[k] = keep * dir[k] + rho * anchor[k];
    }
    means[c] = std::move(dir);
  }
  return means;
}

/// Designated base class whose mean direction is mixed into novel class `label`.
inline int confound_partner(const GenSpec& spec, int label) {
  const auto base = static_cast<int>(spec.classes_per_session.front());
  return label < base ? label : (label - base) % base;
}

/// Gaussian clusters N(mean_c, sigma^2 I). Features are rounded to single
/// precision so the binary feature format stores them exactly.
inline std::vector<SessionDataset> gen_synthetic(const GenSpec& spec) {
  const auto means = class_means(spec);
  std::vector<SessionDataset> sessions;
  int label = 0;
  for (std::size_t t = 0; t < spec.classes_per_session.size(); ++t) {
    SessionDataset ds;
    ds.session_id = t;
    ds.shot = t == 0 ? spec.base_train_per_class : spec.shot;
    const std::size_t n_train = ds.shot;
    for (std::size_t j = 0; j < spec.classes_per_session[t]; ++j, ++label) {
      ds.classes.push_back(label);
      Rng rng(derive_seed(spec.seed, "samples", static_cast<std::uint64_t>(label)));
      std::normal_distribution<double> noise(0.0, 1.0);
      const auto& mu = means[static_cast<std::size_t>(label)];
      auto draw = [&] {
        Record r;
        r.label = label;
        r.features.resize(spec.input_dim);
        for (std::size_t k = 0; k < spec.input_dim; ++k) {
          r.features[k] = static_cast<double>(static_cast<float>(mu[k] + spec.cluster_spread * noise(rng)));
        }
        return r;
      };
      for (std::size_t i = 0; i < n_train; ++i) ds.train.push_back(draw());
      for (std::size_t i = 0; i < spec.test_per_class; ++i) ds.test.push_back(draw());
    }
    sessions.push_back(std::move(ds));
  }
  return sessions;
}

inline std::map<int, std::size_t> label_counts(std::span<const Record> records) {
  std::map<int, std::size_t> counts;
  for (const Record& r : records) ++counts[r.label];
  return counts;
}

/// Splits a pool holding exactly `way` classes into K training records per
/// class (seeded shuffle within each class) and a test remainder.
inline std::pair<std::vector<Record>, std::vector<Record>> split_n_way_k_shot(
    std::span<const Record> pool, std::size_t way, std::size_t shot, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[pool[i].label].push_back(i);
  if (by_class.size() != way) {
    throw DataError("expected " + std::to_string(way) + " classes, pool holds " +
                    std::to_string(by_class.size()));
  }
  std::pair<std::vector<Record>, std::vector<Record>> out;
  for (auto& [label, idx] : by_class) {
    if (idx.size() <= shot) {
      throw DataError("class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                      " records, needs more than " + std::to_string(shot));
    }
    Rng rng(derive_seed(seed, "split", static_cast<std::uint64_t>(label)));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      (i < shot ? out.first : out.second).push_back(pool[idx[i]]);
    }
  }
  return out;
}

/// Checks label-space disjointness across sessions, feature widths and the
/// per-session shot structure.
inline void validate_sessions(std::span<const SessionDataset> sessions) {
  if (sessions.empty()) throw DataError("no sessions");
  std::set<int> seen;
  const std::size_t dim = sessions.front().dim();
  for (const SessionDataset& ds : sessions) {
    if (ds.classes.empty()) throw DataError("session " + std::to_string(ds.session_id) + " has no classes");
    for (int c : ds.classes) {
      if (!seen.insert(c).second) {
        throw ProtocolError("label " + std::to_string(c) + " appears in more than one session");
      }
    }
    for (const auto* records : {&ds.train, &ds.test}) {
      for (const Record& r : *records) {
        if (r.features.size() != dim) throw DataError("inconsistent feature width");
        if (!std::binary_search(ds.classes.begin(), ds.classes.end(), r.label)) {
          throw ProtocolError("record label " + std::to_string(r.label) + " not in session " +
                              std::to_string(ds.session_id) + " label space");
        }
      }
    }
    const std::size_t incremental_shot = sessions.size() > 1 ? sessions[1].shot : 0;
    const auto counts = label_counts(ds.train);
    for (int c : ds.classes) {
      const auto it = counts.find(c);
      const std::size_t n = it == counts.end() ? 0 : it->second;
      if (ds.session_id == 0) {
        if (n == 0 || n < 20 * incremental_shot) {
          throw DataError("base class " + std::to_string(c) + " has " + std::to_string(n) +
                          " training records, needs at least max(1, 20*shot)");
        }
      } else if (n != ds.shot) {
        throw DataError("class " + std::to_string(c) + " of session " + std::to_string(ds.session_id) +
                        " has " + std::to_string(n) + " training records, expected " +
                        std::to_string(ds.shot));
      }
    }
  }
}

inline Tensor features_matrix(std::span<const Record> records) {
  if (records.empty()) return {};
  Tensor out(records.size(), records.front().features.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::copy(records[i].features.begin(), records[i].features.end(), out.row(i).begin());
  }
  return out;
}

inline std::vector<int> labels_of(std::span<const Record> records) {
  std::vector<int> out;
  out.reserve(records.size());
  for (const Record& r : records) out.push_back(r.label);
  return out;
}

}  // namespace fscil
