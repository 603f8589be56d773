#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifdef FSF_JSON_SINGLE_HEADER
#include <json.hpp>
#else
#include <nlohmann/json.hpp>
#endif

#include "fsf/analysis.hpp"
#include "fsf/error.hpp"
#include "fsf/forensics.hpp"
#include "fsf/nn/checkpoint.hpp"
#include "fsf/nn/train.hpp"
#include "fsf/simulate.hpp"

namespace fsf::cli {

using json = nlohmann::json;

struct DataPaths {
  std::string train_manifest;  // empty: <out>/corpus/train_manifest.csv
  std::string test_manifest;   // empty: <out>/corpus/test_manifest.csv
  std::string checkpoint;      // empty: <out>/checkpoint.bin
};

struct SpectrumOptions {
  bool residual = true;
  bool shifted = false;
};

struct ExperimentConfig {
  std::optional<std::uint64_t> seed;
  std::string out = "fsf_out";
  CorpusSpec corpus;
  nn::ModelConfig model;
  nn::TrainConfig train;
  std::vector<std::string> distortions{"none", "jpeg95", "down0.5", "blur1"};
  DemoSpec demo;
  HandcraftedOptions features;
  SpectrumOptions spectrum;
  std::vector<std::size_t> ablate_units{0, 1, 2, 3, 4};
  DataPaths data;

  std::uint64_t require_seed() const {
    if (!seed) throw ConfigError("no seed given; set \"seed\" in the config or pass --seed");
    return *seed;
  }
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!j.at(key).is_number_unsigned())
        throw ConfigError(where + "." + key + " must be a non-negative integer");
      dst = j.at(key).get<T>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!j.at(key).is_boolean()) throw ConfigError(where + "." + key + " must be true or false");
      dst = j.at(key).get<bool>();
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (!j.at(key).is_number()) throw ConfigError(where + "." + key + " must be a number");
      dst = j.at(key).get<T>();
    } else {
      dst = j.at(key).get<T>();
    }
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::check_keys;
  using detail::read;
  ExperimentConfig c;
  check_keys(j, {"seed", "out", "corpus", "model", "train", "distortions", "demo", "features", "spectrum", "ablate", "data"},
             "config");
  if (j.contains("seed")) {
    std::uint64_t s = 0;
    read(j, "seed", s, "config");
    c.seed = s;
  }
  read(j, "out", c.out, "config");

  if (j.contains("corpus")) {
    const auto& s = j.at("corpus");
    check_keys(s, {"size", "base_size", "depth", "spectral_exponent", "nonlinearity", "train_per_class",
                   "test_per_class", "pipelines", "held_out"},
               "corpus");
    read(s, "size", c.corpus.size, "corpus");
    read(s, "base_size", c.corpus.base_size, "corpus");
    read(s, "depth", c.corpus.depth, "corpus");
    read(s, "spectral_exponent", c.corpus.spectral_exponent, "corpus");
    read(s, "nonlinearity", c.corpus.nonlinearity, "corpus");
    read(s, "train_per_class", c.corpus.train_per_class, "corpus");
    read(s, "test_per_class", c.corpus.test_per_class, "corpus");
    read(s, "pipelines", c.corpus.pipelines, "corpus");
    read(s, "held_out", c.corpus.held_out, "corpus");
  }
  if (j.contains("model")) {
    const auto& s = j.at("model");
    check_keys(s, {"channels", "units", "input_size", "hidden", "leaky_slope"}, "model");
    read(s, "channels", c.model.channels, "model");
    read(s, "units", c.model.units, "model");
    read(s, "input_size", c.model.input_size, "model");
    read(s, "hidden", c.model.hidden, "model");
    read(s, "leaky_slope", c.model.slope, "model");
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    check_keys(s, {"batch_size", "max_epochs", "patience", "learning_rate", "beta1", "beta2", "adam_eps",
                   "val_fraction", "augment", "augment_policy"},
               "train");
    read(s, "batch_size", c.train.batch_size, "train");
    read(s, "max_epochs", c.train.max_epochs, "train");
    read(s, "patience", c.train.patience, "train");
    read(s, "learning_rate", c.train.learning_rate, "train");
    read(s, "beta1", c.train.beta1, "train");
    read(s, "beta2", c.train.beta2, "train");
    read(s, "adam_eps", c.train.adam_eps, "train");
    read(s, "val_fraction", c.train.val_fraction, "train");
    read(s, "augment", c.train.augment, "train");
    if (s.contains("augment_policy")) {
      const auto& p = s.at("augment_policy");
      const std::string w = "train.augment_policy";
      check_keys(p, {"p_jpeg", "p_blur", "p_down", "jpeg_quality_min", "jpeg_quality_max", "blur_sigma_max",
                     "down_ratio"},
                 w);
      auto& a = c.train.policy;
      read(p, "p_jpeg", a.p_jpeg, w);
      read(p, "p_blur", a.p_blur, w);
      read(p, "p_down", a.p_down, w);
      read(p, "jpeg_quality_min", a.jpeg_quality_min, w);
      read(p, "jpeg_quality_max", a.jpeg_quality_max, w);
      read(p, "blur_sigma_max", a.blur_sigma_max, w);
      read(p, "down_ratio", a.down_ratio, w);
    }
  }
  read(j, "distortions", c.distortions, "config");
  if (j.contains("demo")) {
    const auto& s = j.at("demo");
    check_keys(s, {"base_size", "stages", "amplitude", "nonlinearity"}, "demo");
    read(s, "base_size", c.demo.base_size, "demo");
    read(s, "stages", c.demo.stages, "demo");
    read(s, "amplitude", c.demo.amplitude, "demo");
    read(s, "nonlinearity", c.demo.nonlinearity, "demo");
  }
  if (j.contains("features")) {
    const auto& s = j.at("features");
    check_keys(s, {"levels", "measure", "residual"}, "features");
    read(s, "levels", c.features.levels, "features");
    std::string measure = "log_mean";
    read(s, "measure", measure, "features");
    try {
      c.features.measure = parse_measure(measure);
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    read(s, "residual", c.features.residual, "features");
  }
  if (j.contains("spectrum")) {
    const auto& s = j.at("spectrum");
    check_keys(s, {"residual", "shifted"}, "spectrum");
    read(s, "residual", c.spectrum.residual, "spectrum");
    read(s, "shifted", c.spectrum.shifted, "spectrum");
  }
  if (j.contains("ablate")) {
    const auto& s = j.at("ablate");
    check_keys(s, {"units"}, "ablate");
    read(s, "units", c.ablate_units, "ablate");
  }
  if (j.contains("data")) {
    const auto& s = j.at("data");
    check_keys(s, {"train_manifest", "test_manifest", "checkpoint"}, "data");
    read(s, "train_manifest", c.data.train_manifest, "data");
    read(s, "test_manifest", c.data.test_manifest, "data");
    read(s, "checkpoint", c.data.checkpoint, "data");
  }
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, false);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_config(j);
}

inline const char* measure_name(Measure m) { return m == Measure::mean ? "mean" : "log_mean"; }

/// Fully resolved configuration, defaults included.
inline json to_json(const ExperimentConfig& c) {
  const auto& a = c.train.policy;
  json j = {
      {"out", c.out},
      {"corpus",
       {{"size", c.corpus.size},
        {"base_size", c.corpus.base_size},
        {"depth", c.corpus.depth},
        {"spectral_exponent", c.corpus.spectral_exponent},
        {"nonlinearity", c.corpus.nonlinearity},
        {"train_per_class", c.corpus.train_per_class},
        {"test_per_class", c.corpus.test_per_class},
        {"pipelines", c.corpus.pipelines},
        {"held_out", c.corpus.held_out}}},
      {"model",
       {{"channels", c.model.channels},
        {"units", c.model.units},
        {"input_size", c.model.input_size},
        {"hidden", c.model.hidden},
        {"leaky_slope", c.model.slope}}},
      {"train",
       {{"batch_size", c.train.batch_size},
        {"max_epochs", c.train.max_epochs},
        {"patience", c.train.patience},
        {"learning_rate", c.train.learning_rate},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps},
        {"val_fraction", c.train.val_fraction},
        {"augment", c.train.augment},
        {"augment_policy",
         {{"p_jpeg", a.p_jpeg},
          {"p_blur", a.p_blur},
          {"p_down", a.p_down},
          {"jpeg_quality_min", a.jpeg_quality_min},
          {"jpeg_quality_max", a.jpeg_quality_max},
          {"blur_sigma_max", a.blur_sigma_max},
          {"down_ratio", a.down_ratio}}}}},
      {"distortions", c.distortions},
      {"demo",
       {{"base_size", c.demo.base_size},
        {"stages", c.demo.stages},
        {"amplitude", c.demo.amplitude},
        {"nonlinearity", c.demo.nonlinearity}}},
      {"features",
       {{"levels", c.features.levels}, {"measure", measure_name(c.features.measure)}, {"residual", c.features.residual}}},
      {"spectrum", {{"residual", c.spectrum.residual}, {"shifted", c.spectrum.shifted}}},
      {"ablate", {{"units", c.ablate_units}}},
      {"data",
       {{"train_manifest", c.data.train_manifest},
        {"test_manifest", c.data.test_manifest},
        {"checkpoint", c.data.checkpoint}}},
  };
  if (c.seed) j["seed"] = *c.seed;
  return j;
}

inline std::uint64_t config_hash(const json& j) {
  const std::string s = j.dump();
  return nn::fnv1a64(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

}  // namespace fsf::cli
