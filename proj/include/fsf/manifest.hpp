#pragma once

// Corpus manifests: UTF-8 CSV with header `path,label,pipeline,seed`.
// Paths are stored relative to the manifest's directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fsf/error.hpp"

namespace fsf {

enum class Label { real = 0, generated = 1 };

inline const char* label_name(Label l) { return l == Label::real ? "real" : "generated"; }

inline Label parse_label(const std::string& s) {
  if (s == "real") return Label::real;
  if (s == "generated") return Label::generated;
  throw DataError("unknown label '" + s + "' (expected real|generated)");
}

struct ManifestEntry {
  std::string path;
  Label label = Label::real;
  std::string pipeline;
  std::uint64_t seed = 0;
};

struct CorpusManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path base_dir;  // directory that relative paths resolve against

  std::filesystem::path resolve(const ManifestEntry& e) const {
    std::filesystem::path p(e.path);
    return p.is_absolute() ? p : base_dir / p;
  }

  std::size_t count(Label l) const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.label == l;
    return n;
  }

  std::map<std::string, std::size_t> per_pipeline() const {
    std::map<std::string, std::size_t> m;
    for (const auto& e : entries) ++m[e.pipeline];
    return m;
  }
};

inline void validate_manifest(const CorpusManifest& m) {
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (e.path.empty()) throw DataError("manifest entry with empty path");
    if (!seen.insert(e.path).second) throw DataError("duplicate manifest path '" + e.path + "'");
    if (e.pipeline.empty() || e.pipeline.find(',') != std::string::npos)
      throw DataError("invalid pipeline id for '" + e.path + "'");
  }
}

inline void write_manifest(const std::filesystem::path& file, const CorpusManifest& m) {
  validate_manifest(m);
  std::ofstream out(file);
  if (!out) throw IoError("cannot write manifest " + file.string());
  out << "path,label,pipeline,seed\n";
  for (const auto& e : m.entries) out << e.path << ',' << label_name(e.label) << ',' << e.pipeline << ',' << e.seed << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

inline CorpusManifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest " + file.string());
  CorpusManifest m;
  m.base_dir = file.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw DataError(file.string() + ": empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "path,label,pipeline,seed") throw DataError(file.string() + ": unexpected manifest header '" + line + "'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 4) throw DataError(file.string() + ":" + std::to_string(lineno) + ": expected 4 fields");
    ManifestEntry e;
    e.path = fields[0];
    e.label = parse_label(fields[1]);
    e.pipeline = fields[2];
    try {
      std::size_t used = 0;
      e.seed = std::stoull(fields[3], &used);
      if (used != fields[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": bad seed '" + fields[3] + "'");
    }
    m.entries.push_back(std::move(e));
  }
  validate_manifest(m);
  return m;
}

}  // namespace fsf
