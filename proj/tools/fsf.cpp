#include <CLI11.hpp>

#include <Eigen/Core>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "experiment_config.hpp"
#include "fsf/analysis.hpp"
#include "fsf/metrics.hpp"
#include "fsf/nn/checkpoint.hpp"
#include "fsf/nn/train.hpp"
#include "fsf/simulate.hpp"
#include "table.hpp"

#ifndef FSF_VERSION
#define FSF_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace fsf;
using namespace fsf::cli;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string manifest;
  std::string checkpoint;
  bool raw = false;
};

struct Context {
  std::string command;
  ExperimentConfig cfg;
  fs::path out;
};

// Parameter problems in user-supplied settings are configuration errors.
template <typename Fn>
auto config_checked(Fn&& fn) {
  try {
    return fn();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

Context make_context(const std::string& command, const Options& o) {
  Context ctx;
  ctx.command = command;
  ctx.cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) ctx.cfg.seed = *o.seed;
  if (!o.out.empty()) ctx.cfg.out = o.out;
  if (ctx.cfg.out.empty()) throw ConfigError("output directory is empty");
  ctx.out = ctx.cfg.out;
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) throw IoError("cannot create " + ctx.out.string() + ": " + ec.message());
  return ctx;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_run_meta(const Context& ctx, const json& outputs) {
  const json cfg = to_json(ctx.cfg);
  json meta = {
      {"command", ctx.command},
      {"seed", ctx.cfg.seed ? json(*ctx.cfg.seed) : json(nullptr)},
      {"config_hash", "fnv1a64:" + hex64(config_hash(cfg))},
      {"config", cfg},
      {"versions",
       {{"fsf", FSF_VERSION},
        {"compiler", __VERSION__},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"cli11", CLI11_VERSION},
        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
        {"checkpoint_format", nn::kCheckpointVersion}}},
      {"threads", thread_count()},
      {"outputs", outputs},
  };
  write_text(ctx.out / ("run_meta_" + ctx.command + ".json"), meta.dump(2) + "\n");
}

fs::path corpus_dir(const Context& ctx) { return ctx.out / "corpus"; }

fs::path train_manifest_path(const Context& ctx, const Options& o) {
  if (!o.manifest.empty()) return o.manifest;
  if (!ctx.cfg.data.train_manifest.empty()) return ctx.cfg.data.train_manifest;
  return corpus_dir(ctx) / "train_manifest.csv";
}

fs::path test_manifest_path(const Context& ctx, const Options& o) {
  if (!o.manifest.empty()) return o.manifest;
  if (!ctx.cfg.data.test_manifest.empty()) return ctx.cfg.data.test_manifest;
  return corpus_dir(ctx) / "test_manifest.csv";
}

fs::path checkpoint_path(const Context& ctx, const Options& o) {
  if (!o.checkpoint.empty()) return o.checkpoint;
  if (!ctx.cfg.data.checkpoint.empty()) return ctx.cfg.data.checkpoint;
  return ctx.out / "checkpoint.bin";
}

std::vector<DistortionConfig> distortions_of(const ExperimentConfig& cfg) {
  if (cfg.distortions.empty()) throw ConfigError("distortion list is empty");
  std::vector<DistortionConfig> out;
  for (const auto& d : cfg.distortions) out.push_back(config_checked([&] { return parse_distortion(d); }));
  return out;
}

Table history_table(const nn::TrainResult& r) {
  Table t{{"epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy", "best"}, {}};
  for (const auto& e : r.history)
    t.add({std::to_string(e.epoch), fmt(e.train_loss, 6), fmt(e.train_accuracy), fmt(e.val_loss, 6),
           fmt(e.val_accuracy), e.epoch == r.best_epoch ? "*" : ""});
  return t;
}

nn::TrainResult run_training(const Context& ctx, const std::vector<nn::Sample>& samples, const nn::ModelConfig& mc) {
  auto tc = ctx.cfg.train;
  tc.seed = ctx.cfg.require_seed();
  std::fprintf(stderr, "training N=%zu channels=%zu on %zu images\n", mc.units, mc.channels, samples.size());
  return nn::train(samples, mc, tc, [](const nn::EpochRecord& e) {
    std::fprintf(stderr, "  epoch %3zu  train_loss %.5f  train_acc %.4f  val_loss %.5f  val_acc %.4f\n", e.epoch,
                 e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy);
  });
}

void print_table(const Table& t) { std::cout << to_aligned(t); }

// ---------------------------------------------------------------------------

int cmd_simulate(const Options& o) {
  auto ctx = make_context("simulate", o);
  auto spec = ctx.cfg.corpus;
  spec.seed = ctx.cfg.require_seed();
  config_checked([&] {
    validate_corpus_spec(spec);
    return 0;
  });
  const auto result = build_corpus(spec, corpus_dir(ctx));

  Table t{{"split", "pipeline", "label", "count"}, {}};
  for (const auto* m : {&result.train, &result.test}) {
    const std::string split = m == &result.train ? "train" : "test";
    std::map<std::string, std::pair<std::string, std::size_t>> counts;
    for (const auto& e : m->entries) {
      auto& c = counts[e.pipeline];
      c.first = label_name(e.label);
      ++c.second;
    }
    for (const auto& [p, c] : counts) t.add({split, p, c.first, std::to_string(c.second)});
  }
  write_table(t, ctx.out / "corpus_counts");
  print_table(t);
  write_run_meta(ctx, {{"train_manifest", result.train_manifest.string()},
                       {"test_manifest", result.test_manifest.string()},
                       {"counts", "corpus_counts.csv"}});
  return 0;
}

int cmd_demo_fractal(const Options& o) {
  auto ctx = make_context("demo-fractal", o);
  auto spec = ctx.cfg.demo;
  spec.seed = ctx.cfg.require_seed();
  const auto demo = fractal_demo(spec);
  write_fractal_demo(demo, ctx.out);

  Table t{{"pipeline", "stage", "size", "quadrant_correlation", "glyph_copies"}, {}};
  for (const auto& p : demo.panels)
    t.add({p.pipeline, std::to_string(p.stage), std::to_string(p.spectrum.height()), fmt(p.quadrant_correlation),
           std::to_string(p.glyph_copies)});
  print_table(t);
  write_run_meta(ctx, {{"grid", "fractal_grid.pgm"}, {"captions", "captions.csv"}});
  return 0;
}

int cmd_spectrum(const Options& o) {
  auto ctx = make_context("spectrum", o);
  const bool residual = ctx.cfg.spectrum.residual && !o.raw;
  fs::path manifest = test_manifest_path(ctx, o);
  if (o.manifest.empty() && ctx.cfg.data.test_manifest.empty() && !fs::exists(manifest))
    manifest = train_manifest_path(ctx, o);
  const auto groups = group_average_spectra(read_manifest(manifest), residual);

  const fs::path dir = ctx.out / "spectrum";
  fs::create_directories(dir);
  const std::string kind = residual ? "residual" : "raw";
  Table t{{"group", "count", "input", "quadrant_correlation", "self_similarity", "file"}, {}};
  for (const auto& g : groups) {
    const std::string file = "spectrum_" + g.group + "_" + kind + ".pgm";
    write_pnm(dir / file, spectrum_panel(g.average, ctx.cfg.spectrum.shifted), 8);
    t.add({g.group, std::to_string(g.count), kind, fmt(g.quadrant_correlation), fmt(g.self_similarity), file});
  }
  write_table(t, dir / ("spectrum_report_" + kind));
  print_table(t);
  write_run_meta(ctx, {{"manifest", manifest.string()}, {"report", "spectrum/spectrum_report_" + kind + ".csv"}});
  return 0;
}

int cmd_features(const Options& o) {
  auto ctx = make_context("features", o);
  fs::path manifest_file = test_manifest_path(ctx, o);
  if (o.manifest.empty() && ctx.cfg.data.test_manifest.empty() && !fs::exists(manifest_file))
    manifest_file = train_manifest_path(ctx, o);
  const auto manifest = read_manifest(manifest_file);
  if (manifest.entries.empty()) throw DataError("manifest has no entries");
  const auto& opts = ctx.cfg.features;

  std::optional<nn::Net> model;
  std::string ckpt = o.checkpoint.empty() ? ctx.cfg.data.checkpoint : o.checkpoint;
  if (!ckpt.empty()) model = nn::load_checkpoint<float>(ckpt).model;

  std::vector<std::vector<double>> hand(manifest.entries.size()), learned(manifest.entries.size());
  parallel_for(manifest.entries.size(), [&](std::size_t i) {
    const Image img = grayscale_of(read_pnm(manifest.resolve(manifest.entries[i])));
    hand[i] = handcrafted_features(img, opts);
    if (model) {
      nn::Trace<float> tr;
      model->forward(nn::model_input(img, model->config().input_size), &tr);
      learned[i].assign(tr.features.begin(), tr.features.end());
    }
  });

  Table t{{"path", "label", "pipeline"}, {}};
  for (std::size_t l = 0; l <= opts.levels; ++l) t.header.push_back("ss_L" + std::to_string(l));
  if (model)
    for (std::size_t n = 0; n <= model->config().units; ++n)
      for (std::size_t c = 0; c < model->config().channels; ++c)
        t.header.push_back("S_L" + std::to_string(n) + "_c" + std::to_string(c));
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    std::vector<std::string> row{e.path, label_name(e.label), e.pipeline};
    for (double v : hand[i]) row.push_back(fmt(v, 8));
    for (double v : learned[i]) row.push_back(fmt(v, 8));
    t.add(std::move(row));
  }
  write_text(ctx.out / "features.csv", to_csv(t));

  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < hand.size(); ++i)
    (manifest.entries[i].label == Label::generated ? pos : neg).push_back(hand[i][0]);
  json outputs = {{"features", "features.csv"}, {"rows", hand.size()}, {"manifest", manifest_file.string()}};
  std::printf("%zu rows, %zu columns -> %s\n", t.rows.size(), t.header.size(), (ctx.out / "features.csv").c_str());
  if (!pos.empty() && !neg.empty()) {
    const double a = auc(pos, neg);
    std::printf("AUC of ss_L0 (generated vs real): %.4f\n", a);
    outputs["auc_ss_L0"] = a;
  }
  write_run_meta(ctx, outputs);
  return 0;
}

int cmd_train(const Options& o) {
  auto ctx = make_context("train", o);
  const auto manifest = train_manifest_path(ctx, o);
  const auto samples = nn::load_samples(read_manifest(manifest));
  const auto r = run_training(ctx, samples, ctx.cfg.model);
  const auto ckpt = checkpoint_path(ctx, o);
  nn::save_checkpoint(ckpt, r.model, {r.best_epoch, ctx.cfg.require_seed(), r.best_val_loss});
  write_table(history_table(r), ctx.out / "history");
  std::printf("best epoch %zu of %zu, val loss %.6f, train accuracy %.4f (%zu train / %zu val)\n", r.best_epoch,
              r.history.size(), r.best_val_loss, r.train_accuracy, r.train_count, r.val_count);
  std::printf("checkpoint %s\n", ckpt.c_str());
  write_run_meta(ctx, {{"manifest", manifest.string()},
                       {"checkpoint", ckpt.string()},
                       {"history", "history.csv"},
                       {"best_epoch", r.best_epoch},
                       {"best_val_loss", r.best_val_loss},
                       {"train_accuracy", r.train_accuracy}});
  return 0;
}

Table accuracy_table(const nn::AccuracyTable& acc) {
  Table t{{"pipeline"}, {}};
  for (const auto& c : acc.columns) t.header.push_back(c);
  for (std::size_t r = 0; r < acc.rows.size(); ++r) {
    std::vector<std::string> row{acc.rows[r]};
    for (double v : acc.values[r]) row.push_back(fmt(v));
    t.add(std::move(row));
  }
  return t;
}

int cmd_eval(const Options& o) {
  auto ctx = make_context("eval", o);
  const auto distortions = distortions_of(ctx.cfg);
  const auto ckpt = checkpoint_path(ctx, o);
  const auto loaded = nn::load_checkpoint<float>(ckpt);
  const auto manifest = test_manifest_path(ctx, o);
  const auto samples = nn::load_samples(read_manifest(manifest));

  const auto t = accuracy_table(nn::evaluate(loaded.model, samples, distortions));
  write_table(t, ctx.out / "eval");
  Table preds{{"path", "label", "pipeline", "logit", "predicted"}, {}};
  for (const auto& p : nn::predict(loaded.model, samples, {}))
    preds.add({p.path, label_name(p.label), p.pipeline, fmt(p.logit, 6),
               nn::predicts_generated(p) ? "generated" : "real"});
  write_text(ctx.out / "predictions.csv", to_csv(preds));
  print_table(t);
  write_run_meta(ctx, {{"checkpoint", ckpt.string()}, {"manifest", manifest.string()}, {"table", "eval.csv"}});
  return 0;
}

int cmd_ablate(const Options& o) {
  auto ctx = make_context("ablate", o);
  if (ctx.cfg.ablate_units.empty()) throw ConfigError("ablate.units is empty");
  const auto train_file = !ctx.cfg.data.train_manifest.empty() ? fs::path(ctx.cfg.data.train_manifest)
                                                                 : corpus_dir(ctx) / "train_manifest.csv";
  const auto test_file = test_manifest_path(ctx, o);
  const auto train_samples = nn::load_samples(read_manifest(train_file));
  const auto test_samples = nn::load_samples(read_manifest(test_file));

  std::set<std::string> seen, test_kinds;
  for (const auto& s : train_samples)
    if (s.label == Label::generated) seen.insert(s.pipeline);
  for (const auto& s : test_samples)
    if (s.label == Label::generated) test_kinds.insert(s.pipeline);
  std::vector<std::string> unseen;
  for (const auto& k : test_kinds)
    if (!seen.count(k)) unseen.push_back(k);

  Table t{{"units"}, {}};
  for (const auto& k : test_kinds) t.header.push_back(k);
  t.header.insert(t.header.end(), {"real", "average", "overall"});
  if (!unseen.empty()) t.header.push_back("unseen");
  t.header.insert(t.header.end(), {"best_epoch", "train_accuracy"});

  json runs = json::array();
  for (std::size_t units : ctx.cfg.ablate_units) {
    auto mc = ctx.cfg.model;
    mc.units = units;
    nn::validate_model_config(mc);
    const auto r = run_training(ctx, train_samples, mc);
    const std::string tag = "ablate_N" + std::to_string(units);
    nn::save_checkpoint(ctx.out / (tag + ".bin"), r.model, {r.best_epoch, ctx.cfg.require_seed(), r.best_val_loss});
    write_table(history_table(r), ctx.out / (tag + "_history"));

    const auto preds = nn::predict(r.model, test_samples, {});
    const auto acc = nn::pipeline_accuracy(preds);
    std::vector<std::string> row{units == 0 ? "N=0*" : "N=" + std::to_string(units)};
    double avg = 0;
    for (const auto& k : test_kinds) {
      row.push_back(fmt(acc.at(k)));
      avg += acc.at(k);
    }
    row.push_back(acc.count("real") ? fmt(acc.at("real")) : "");
    row.push_back(fmt(avg / double(test_kinds.size())));
    row.push_back(fmt(acc.at("overall")));
    if (!unseen.empty()) row.push_back(fmt(nn::group_accuracy(preds, unseen)));
    row.push_back(std::to_string(r.best_epoch));
    row.push_back(fmt(r.train_accuracy));
    t.add(row);
    runs.push_back({{"units", units}, {"checkpoint", tag + ".bin"}, {"best_epoch", r.best_epoch}});
    std::fprintf(stderr, "%s done\n", row.front().c_str());
  }
  write_table(t, ctx.out / "ablate");
  print_table(t);
  write_run_meta(ctx, {{"train_manifest", train_file.string()},
                       {"test_manifest", test_file.string()},
                       {"table", "ablate.csv"},
                       {"unseen", unseen},
                       {"runs", runs}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fractal spectrum forensics: synthetic corpora, spectral analysis and FractalCNN detectors"};
  app.set_version_flag("--version", FSF_VERSION);
  app.require_subcommand(1);

  Options o;
  std::uint64_t seed = 0;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "global seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory (overrides the config)");
  };
  auto* simulate = app.add_subcommand("simulate", "build a synthetic real/generated corpus");
  auto* demo = app.add_subcommand("demo-fractal", "spectrum grid of a watermarked image under three upsamplers");
  auto* spectrum = app.add_subcommand("spectrum", "average spectra per pipeline with quadrant-correlation report");
  auto* features = app.add_subcommand("features", "export self-similarity statistics and learned S-vectors");
  auto* train = app.add_subcommand("train", "train a FractalCNN detector");
  auto* eval = app.add_subcommand("eval", "accuracy grid: pipelines x distortions");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate over a range of fractal unit counts");
  for (auto* s : {simulate, demo, spectrum, features, train, eval, ablate}) common(s);
  for (auto* s : {spectrum, features, train, eval})
    s->add_option("--manifest", o.manifest, "manifest CSV (overrides the config)");
  for (auto* s : {features, train, eval})
    s->add_option("--checkpoint", o.checkpoint, "checkpoint file (overrides the config)");
  spectrum->add_flag("--raw", o.raw, "use raw pixels instead of the noise residual");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  for (auto* s : {simulate, demo, spectrum, features, train, eval, ablate})
    if (s->count("--seed")) o.seed = seed;

  try {
    if (*simulate) return cmd_simulate(o);
    if (*demo) return cmd_demo_fractal(o);
    if (*spectrum) return cmd_spectrum(o);
    if (*features) return cmd_features(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*ablate) return cmd_ablate(o);
  } catch (const fsf::Error& e) {
    std::cerr << "fsf: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "fsf: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
