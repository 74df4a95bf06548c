// SPDX-License-Identifier: Apache-2.0
//
// Precomputed-feature files and dataset manifests.
//
// CSV:    header `label,f0,f1,...`, one record per line, shortest round-trip
//         decimal representation.
// Binary: "FSCF", u32 version (1), u32 dim, u64 record count, then per record
//         u32 label followed by dim float32 values; all little-endian.
#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"

#include "fscil/data.hpp"
#include "fscil/error.hpp"

namespace fscil {

enum class FeatureFormat { Csv, Binary };

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string format_double_17(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text, std::size_t line) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ParseError("invalid number '" + std::string(text) + "'", line);
  }
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline void write_features_csv(std::ostream& out, std::span<const Record> records, std::size_t dim) {
  out << "label";
  for (std::size_t k = 0; k < dim; ++k) out << ",f" << k;
  out << '\n';
  for (const Record& r : records) {
    if (r.features.size() != dim) throw DataError("record width does not match header");
    out << r.label;
    for (double v : r.features) out << ',' << format_double(v);
    out << '\n';
  }
}

inline std::vector<Record> read_features_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.empty() || header.front() != "label") throw ParseError("header must start with 'label'", 1);
  const std::size_t dim = header.size() - 1;
  std::vector<Record> records;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != dim + 1) {
      throw ParseError("expected " + std::to_string(dim + 1) + " fields, found " +
                       std::to_string(fields.size()), line_no);
    }
    Record r;
    int label = 0;
    const auto res = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
    if (res.ec != std::errc() || res.ptr != fields[0].data() + fields[0].size() || label < 0) {
      throw ParseError("invalid label '" + std::string(fields[0]) + "'", line_no);
    }
    r.label = label;
    r.features.reserve(dim);
    for (std::size_t k = 1; k < fields.size(); ++k) r.features.push_back(parse_double(fields[k], line_no));
    records.push_back(std::move(r));
  }
  return records;
}

namespace detail {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw ParseError(std::string("truncated binary file at ") + what);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline constexpr char kBinaryMagic[4] = {'F', 'S', 'C', 'F'};
inline constexpr std::uint32_t kBinaryVersion = 1;

/// Values are narrowed to float32 as the format requires.
inline void write_features_bin(std::ostream& out, std::span<const Record> records, std::size_t dim) {
  out.write(kBinaryMagic, 4);
  detail::put_le<std::uint32_t>(out, kBinaryVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
  detail::put_le<std::uint64_t>(out, records.size());
  for (const Record& r : records) {
    if (r.features.size() != dim) throw DataError("record width does not match header");
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.label));
    for (double v : r.features) detail::put_le<float>(out, static_cast<float>(v));
  }
}

inline std::vector<Record> read_features_bin(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kBinaryMagic, 4) != 0) throw ParseError("bad magic, not an FSCF file");
  const auto version = detail::get_le<std::uint32_t>(in, "version");
  if (version != kBinaryVersion) throw ParseError("unsupported FSCF version " + std::to_string(version));
  const auto dim = detail::get_le<std::uint32_t>(in, "dim");
  const auto count = detail::get_le<std::uint64_t>(in, "count");
  std::vector<Record> records;
  for (std::uint64_t i = 0; i < count; ++i) {
    Record r;
    r.label = static_cast<int>(detail::get_le<std::uint32_t>(in, "label"));
    r.features.resize(dim);
    for (auto& v : r.features) v = static_cast<double>(detail::get_le<float>(in, "features"));
    records.push_back(std::move(r));
  }
  return records;
}

inline std::vector<Record> read_features(const std::filesystem::path& path, FeatureFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return format == FeatureFormat::Csv ? read_features_csv(in) : read_features_bin(in);
}

inline void write_features(const std::filesystem::path& path, std::span<const Record> records,
                           std::size_t dim, FeatureFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  if (format == FeatureFormat::Csv) {
    write_features_csv(out, records, dim);
  } else {
    write_features_bin(out, records, dim);
  }
}

struct SessionFiles {
  std::string train;
  std::string test;
};

struct Manifest {
  FeatureFormat format = FeatureFormat::Csv;
  std::size_t dim = 0;
  std::size_t way = 0;   // incremental-session way
  std::size_t shot = 0;  // incremental-session shot
  bool frozen_features = false;
  std::vector<SessionFiles> sessions;
};

inline std::string_view format_name(FeatureFormat f) { return f == FeatureFormat::Csv ? "csv" : "bin"; }

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json j;
  j["format"] = format_name(m.format);
  j["dim"] = m.dim;
  j["way"] = m.way;
  j["shot"] = m.shot;
  j["frozen_features"] = m.frozen_features;
  j["sessions"] = nlohmann::json::array();
  for (const auto& s : m.sessions) j["sessions"].push_back({{"train", s.train}, {"test", s.test}});
  return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  try {
    Manifest m;
    const std::string fmt = j.at("format").get<std::string>();
    if (fmt == "csv") {
      m.format = FeatureFormat::Csv;
    } else if (fmt == "bin") {
      m.format = FeatureFormat::Binary;
    } else {
      throw ParseError("manifest format must be csv or bin, got '" + fmt + "'");
    }
    m.dim = j.at("dim").get<std::size_t>();
    m.way = j.at("way").get<std::size_t>();
    m.shot = j.at("shot").get<std::size_t>();
    m.frozen_features = j.value("frozen_features", false);
    for (const auto& s : j.at("sessions")) {
      m.sessions.push_back({s.at("train").get<std::string>(), s.at("test").get<std::string>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

struct LoadedFeatures {
  Manifest manifest;
  std::vector<SessionDataset> sessions;
};

/// Loads every session listed in a manifest (paths relative to the manifest)
/// and enforces disjoint label spaces across sessions.
inline LoadedFeatures load_features(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  LoadedFeatures out;
  out.manifest = manifest_from_json(j);
  const auto dir = manifest_path.parent_path();
  for (std::size_t t = 0; t < out.manifest.sessions.size(); ++t) {
    SessionDataset ds;
    ds.session_id = t;
    ds.train = read_features(dir / out.manifest.sessions[t].train, out.manifest.format);
    ds.test = read_features(dir / out.manifest.sessions[t].test, out.manifest.format);
    std::set<int> classes;
    for (const auto* records : {&ds.train, &ds.test}) {
      for (const Record& r : *records) {
        if (r.features.size() != out.manifest.dim) {
          throw DataError("session " + std::to_string(t) + " feature width " +
                          std::to_string(r.features.size()) + " differs from manifest dim " +
                          std::to_string(out.manifest.dim));
        }
        classes.insert(r.label);
      }
    }
    ds.classes.assign(classes.begin(), classes.end());
    if (t == 0) {
      const auto counts = label_counts(ds.train);
      ds.shot = counts.empty() ? 0 : counts.begin()->second;
    } else {
      ds.shot = out.manifest.shot;
    }
    out.sessions.push_back(std::move(ds));
  }
  validate_sessions(out.sessions);
  return out;
}

/// Writes one train and one test file per session plus `manifest.json`.
inline Manifest save_dataset(const std::filesystem::path& dir, std::span<const SessionDataset> sessions,
                             FeatureFormat format, bool frozen_features = false) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.format = format;
  m.dim = sessions.empty() ? 0 : sessions.front().dim();
  m.way = sessions.size() > 1 ? sessions[1].way() : 0;
  m.shot = sessions.size() > 1 ? sessions[1].shot : 0;
  m.frozen_features = frozen_features;
  const std::string ext = format == FeatureFormat::Csv ? ".csv" : ".bin";
  for (const SessionDataset& ds : sessions) {
    const std::string stem = "session" + std::to_string(ds.session_id);
    SessionFiles files{stem + "_train" + ext, stem + "_test" + ext};
    write_features(dir / files.train, ds.train, m.dim, format);
    write_features(dir / files.test, ds.test, m.dim, format);
    m.sessions.push_back(files);
  }
  std::ofstream out(dir / "manifest.json");
  out << to_json(m).dump(2) << '\n';
  return m;
}

}  // namespace fscil
