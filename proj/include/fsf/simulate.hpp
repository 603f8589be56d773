#pragma once

// Synthetic upsampling pipelines and labeled corpus builders.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/fft.hpp"
#include "fsf/image_io.hpp"
#include "fsf/manifest.hpp"
#include "fsf/ops.hpp"
#include "fsf/parallel.hpp"
#include "fsf/rng.hpp"
#include "fsf/tensor.hpp"

namespace fsf {

enum class UpsampleKind { zero_insert, nearest, tconv_conv };

inline const char* kind_name(UpsampleKind k) {
  switch (k) {
    case UpsampleKind::zero_insert:
      return "zero_insert";
    case UpsampleKind::nearest:
      return "nearest";
    default:
      return "tconv_conv";
  }
}

inline UpsampleKind parse_kind(const std::string& s) {
  if (s == "zero_insert") return UpsampleKind::zero_insert;
  if (s == "nearest") return UpsampleKind::nearest;
  if (s == "tconv_conv") return UpsampleKind::tconv_conv;
  throw ParameterError("unknown upsampling kind '" + s + "' (zero_insert|nearest|tconv_conv)");
}

struct PipelineConfig {
  UpsampleKind kind = UpsampleKind::zero_insert;
  std::size_t depth = 3;
  std::uint64_t seed = 0;
  std::size_t base_height = 8;
  std::size_t base_width = 8;
  bool nonlinearity = true;
  double spectral_exponent = 1.0;

  std::size_t out_height() const { return base_height << depth; }
  std::size_t out_width() const { return base_width << depth; }
};

inline constexpr std::size_t kMaxImageExtent = 8192;
inline constexpr double kTconvInitStd = 0.1;

// ---------------------------------------------------------------------------
// Linear upsamplers.

inline Image upsample_zero(const Image& in) {
  require_rank3(in.shape(), "upsample_zero");
  Image out(in.channels(), 2 * in.height(), 2 * in.width());
  for (std::size_t c = 0; c < in.channels(); ++c)
    for (std::size_t y = 0; y < in.height(); ++y)
      for (std::size_t x = 0; x < in.width(); ++x) out(c, 2 * y, 2 * x) = in(c, y, x);
  return out;
}

inline Image upsample_nearest(const Image& in) {
  require_rank3(in.shape(), "upsample_nearest");
  Image out(in.channels(), 2 * in.height(), 2 * in.width());
  for (std::size_t c = 0; c < in.channels(); ++c)
    for (std::size_t y = 0; y < out.height(); ++y)
      for (std::size_t x = 0; x < out.width(); ++x) out(c, y, x) = in(c, y / 2, x / 2);
  return out;
}

// ---------------------------------------------------------------------------
// Transposed-conv stage: 4x4 stride-2 transposed conv, then two 3x3 convs with
// a leaky ReLU between them. Single channel; applied to each image channel.

struct TconvStage {
  Tensor<double> up{Shape{1, 1, 4, 4}};
  Tensor<double> conv1{Shape{1, 1, 3, 3}};
  Tensor<double> conv2{Shape{1, 1, 3, 3}};
};

inline TconvStage random_tconv_stage(Rng& rng, double stddev = kTconvInitStd) {
  TconvStage s;
  for (auto* t : {&s.up, &s.conv1, &s.conv2})
    for (auto& v : t->vec()) v = rng.normal(0.0, stddev);
  return s;
}

// Kernels under which the stage reduces to zero insertion.
inline TconvStage identity_tconv_stage() {
  TconvStage s;
  s.up[1 * 4 + 1] = 1.0;
  s.conv1[4] = 1.0;
  s.conv2[4] = 1.0;
  return s;
}

inline Image upsample_tconv(const Image& in, const TconvStage& stage, bool nonlinearity = true) {
  require_rank3(in.shape(), "upsample_tconv");
  const std::vector<double> zero_bias{0.0};
  Image out(in.channels(), 2 * in.height(), 2 * in.width());
  for (std::size_t c = 0; c < in.channels(); ++c) {
    Image plane(Shape{1, in.height(), in.width()}, std::vector<double>(in.channel(c).begin(), in.channel(c).end()));
    auto y = transposed_conv2d(plane, stage.up);
    y = conv2d(y, stage.conv1, zero_bias);
    if (nonlinearity) y = leaky_relu(std::move(y));
    y = conv2d(y, stage.conv2, zero_bias);
    std::copy(y.vec().begin(), y.vec().end(), out.channel(c).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// "Real" surrogate: Gaussian random field with amplitude spectrum ~ 1/f^alpha,
// mean 0.5, standard deviation 0.15, clamped to [0, 1].

inline Image synth_real(std::uint64_t seed, std::size_t h, std::size_t w, double alpha = 1.0) {
  if (h == 0 || w == 0) throw ParameterError("synth_real: empty size");
  Rng rng(seed);
  std::vector<double> noise(h * w);
  for (auto& v : noise) v = rng.normal();
  auto spec = dft2_complex(std::span<const double>(noise), h, w);
  for (std::size_t u = 0; u < h; ++u) {
    const double fu = double(std::min(u, h - u)) / double(h);
    for (std::size_t v = 0; v < w; ++v) {
      const double fv = double(std::min(v, w - v)) / double(w);
      const double f = std::sqrt(fu * fu + fv * fv);
      spec[u * w + v] *= f > 0 ? std::pow(f, -alpha) : 0.0;
    }
  }
  auto field = idft2_real(std::move(spec), h, w);
  double mean = 0, var = 0;
  for (auto v : field) mean += v;
  mean /= double(field.size());
  for (auto v : field) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / double(field.size()));
  Image img(1, h, w);
  for (std::size_t i = 0; i < field.size(); ++i)
    img[i] = std::clamp(0.5 + 0.15 * (sd > 0 ? (field[i] - mean) / sd : 0.0), 0.0, 1.0);
  return img;
}

// Affine map of `img` onto the mean/std of `ref`, then clamp to [0, 1].
inline Image match_moments(Image img, const Image& ref) {
  auto moments = [](const Image& x) {
    double m = 0, v = 0;
    for (auto e : x.vec()) m += e;
    m /= double(x.size());
    for (auto e : x.vec()) v += (e - m) * (e - m);
    return std::pair{m, std::sqrt(v / double(x.size()))};
  };
  const auto [m, s] = moments(img);
  const auto [rm, rs] = moments(ref);
  for (auto& e : img.vec()) e = std::clamp(rm + (s > 0 ? (e - m) * rs / s : 0.0), 0.0, 1.0);
  return img;
}

inline void validate_pipeline(const PipelineConfig& cfg) {
  if (cfg.depth < 1) throw ParameterError("pipeline depth must be >= 1");
  if (cfg.base_height == 0 || cfg.base_width == 0) throw ParameterError("pipeline base size must be positive");
  if (cfg.depth > 13 || cfg.out_height() > kMaxImageExtent || cfg.out_width() > kMaxImageExtent)
    throw ParameterError("pipeline output exceeds " + std::to_string(kMaxImageExtent) + " pixels per side");
}

// Upsamples `base` cfg.depth times; cfg.seed drives the transposed-conv
// kernels. Returns the base followed by every stage output.
inline std::vector<Image> upsample_stages(const Image& base, const PipelineConfig& cfg) {
  validate_pipeline(cfg);
  const std::uint64_t seed = cfg.seed;
  std::vector<Image> stages{base};
  for (std::size_t d = 0; d < cfg.depth; ++d) {
    const Image& prev = stages.back();
    switch (cfg.kind) {
      case UpsampleKind::zero_insert:
        stages.push_back(upsample_zero(prev));
        break;
      case UpsampleKind::nearest:
        stages.push_back(upsample_nearest(prev));
        break;
      case UpsampleKind::tconv_conv: {
        Rng rng(mix_seed(seed, 1 + d));
        stages.push_back(upsample_tconv(prev, random_tconv_stage(rng), cfg.nonlinearity));
        break;
      }
    }
  }
  return stages;
}

/// Per-stage intermediates, starting with the base image.
inline std::vector<Image> generate_fake_stages(std::uint64_t seed, const PipelineConfig& cfg) {
  validate_pipeline(cfg);
  PipelineConfig c = cfg;
  c.seed = seed;
  return upsample_stages(synth_real(mix_seed(seed, 0), cfg.base_height, cfg.base_width, cfg.spectral_exponent), c);
}

/// Base surrogate at cfg.base size followed by cfg.depth upsampling stages.
/// Linear kinds stay inside [0, 1] exactly; the transposed-conv output is
/// mapped back onto the base image's mean and spread, then clamped.
inline Image generate_fake(std::uint64_t seed, const PipelineConfig& cfg) {
  auto stages = generate_fake_stages(seed, cfg);
  if (cfg.kind == UpsampleKind::tconv_conv) return match_moments(std::move(stages.back()), stages.front());
  return std::move(stages.back());
}

// ---------------------------------------------------------------------------
// Spectral watermark.

// Rasterized capital 'A' inside a box of the given size at (top, left), on an
// h x w canvas.
inline Tensor<double> letter_a_glyph(std::size_t h, std::size_t w, std::size_t top, std::size_t left,
                                     std::size_t box_h, std::size_t box_w) {
  Tensor<double> mask(1, h, w);
  if (box_h < 3 || box_w < 3) throw ParameterError("glyph box too small");
  const double cx = double(box_w - 1) / 2.0;
  for (std::size_t r = 0; r < box_h; ++r) {
    const double t = double(r) / double(box_h - 1);  // 0 at apex
    const double half = t * cx;
    const auto l = static_cast<std::ptrdiff_t>(std::lround(cx - half));
    const auto rr = static_cast<std::ptrdiff_t>(std::lround(cx + half));
    auto put = [&](std::ptrdiff_t col) {
      if (col < 0) return;
      const std::size_t y = top + r, x = left + std::size_t(col);
      if (y < h && x < w) mask(0, y, x) = 1.0;
    };
    put(l);
    put(rr);
    if (r == (box_h * 3) / 5)
      for (auto col = l; col <= rr; ++col) put(col);
  }
  return mask;
}

/// Raises the magnitude of every bin under the glyph by `amplitude`, keeping
/// phase, mirrored onto conjugate bins so the result stays real.
inline Image embed_spectral_watermark(const Image& img, const Tensor<double>& glyph, double amplitude) {
  require_rank3(img.shape(), "embed_spectral_watermark");
  const std::size_t h = img.height(), w = img.width();
  if (glyph.rank() != 3 || glyph.channels() != 1 || glyph.height() != h || glyph.width() != w)
    throw DimensionError("glyph mask must be 1 x H x W matching the image");
  Image out(img.shape());
  for (std::size_t c = 0; c < img.channels(); ++c) {
    auto z = dft2_complex(img.channel(c), h, w);
    for (std::size_t u = 0; u < h; ++u)
      for (std::size_t v = 0; v < w; ++v) {
        const double m = std::max(glyph(0, u, v), glyph(0, (h - u) % h, (w - v) % w));
        if (m == 0) continue;
        auto& bin = z[u * w + v];
        const double mag = std::abs(bin);
        const cplx phase = mag > 0 ? bin / mag : cplx(1.0);
        bin = phase * (mag + amplitude * m);
      }
    auto plane = idft2_real(std::move(z), h, w);
    std::copy(plane.begin(), plane.end(), out.channel(c).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus builder.

struct CorpusSpec {
  std::size_t size = 64;        // side length of real images
  std::size_t base_size = 8;    // side length before upsampling
  std::size_t depth = 3;
  double spectral_exponent = 1.0;
  bool nonlinearity = true;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 0;  // per pipeline, plus the same number of reals
  std::vector<std::string> pipelines{"tconv_conv", "nearest", "zero_insert"};
  std::vector<std::string> held_out;
  std::uint64_t seed = 1;
};

struct CorpusResult {
  CorpusManifest train;
  CorpusManifest test;
  std::filesystem::path train_manifest;
  std::filesystem::path test_manifest;  // empty when test_per_class == 0
};

inline PipelineConfig pipeline_for(const CorpusSpec& spec, const std::string& id, std::uint64_t seed) {
  PipelineConfig cfg;
  cfg.kind = parse_kind(id);
  cfg.depth = spec.depth;
  cfg.seed = seed;
  cfg.base_height = cfg.base_width = spec.base_size;
  cfg.nonlinearity = spec.nonlinearity;
  cfg.spectral_exponent = spec.spectral_exponent;
  return cfg;
}

/// Regenerates one manifest entry from its provenance.
inline Image regenerate(const CorpusSpec& spec, const ManifestEntry& e) {
  if (e.label == Label::real) return synth_real(e.seed, spec.size, spec.size, spec.spectral_exponent);
  return generate_fake(e.seed, pipeline_for(spec, e.pipeline, e.seed));
}

inline void validate_corpus_spec(const CorpusSpec& spec) {
  if (spec.pipelines.empty()) throw ParameterError("corpus needs at least one pipeline");
  for (const auto& p : spec.pipelines) parse_kind(p);
  for (const auto& h : spec.held_out)
    if (std::find(spec.pipelines.begin(), spec.pipelines.end(), h) == spec.pipelines.end())
      throw ParameterError("held-out pipeline '" + h + "' is not in the pipeline list");
  if (spec.held_out.size() >= spec.pipelines.size() && spec.train_per_class > 0)
    throw ParameterError("every pipeline is held out; nothing left for training");
  if ((spec.base_size << spec.depth) != spec.size)
    throw ParameterError("base_size * 2^depth must equal size (" + std::to_string(spec.base_size) + " * 2^" +
                         std::to_string(spec.depth) + " != " + std::to_string(spec.size) + ")");
  validate_pipeline(pipeline_for(spec, spec.pipelines.front(), 0));
}

/// Writes images (8-bit PGM) under out_dir/{train,test}/ plus manifests.
inline CorpusResult build_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
  validate_corpus_spec(spec);
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir / "train", ec);
  if (!ec && spec.test_per_class > 0) fs::create_directories(out_dir / "test", ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  std::vector<std::string> train_kinds;
  for (const auto& p : spec.pipelines)
    if (std::find(spec.held_out.begin(), spec.held_out.end(), p) == spec.held_out.end()) train_kinds.push_back(p);

  std::uint64_t counter = 0;
  auto next_seed = [&] { return mix_seed(spec.seed, counter++); };
  auto entry_name = [](const std::string& split, const std::string& stem, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%05zu.pgm", i);
    return split + "/" + stem + buf;
  };

  CorpusResult result;
  result.train.base_dir = result.test.base_dir = out_dir;
  for (std::size_t i = 0; i < spec.train_per_class; ++i)
    result.train.entries.push_back({entry_name("train", "real", i), Label::real, "real", next_seed()});
  for (std::size_t i = 0; i < spec.train_per_class; ++i) {
    const auto& kind = train_kinds[i % train_kinds.size()];
    result.train.entries.push_back({entry_name("train", kind, i), Label::generated, kind, next_seed()});
  }
  if (spec.test_per_class > 0) {
    for (std::size_t i = 0; i < spec.test_per_class; ++i)
      result.test.entries.push_back({entry_name("test", "real", i), Label::real, "real", next_seed()});
    for (const auto& kind : spec.pipelines)
      for (std::size_t i = 0; i < spec.test_per_class; ++i)
        result.test.entries.push_back({entry_name("test", kind, i), Label::generated, kind, next_seed()});
  }

  for (const CorpusManifest* m : {&result.train, &result.test}) {
    parallel_for(m->entries.size(), [&](std::size_t i) {
      const auto& e = m->entries[i];
      write_pnm(m->resolve(e), regenerate(spec, e), 8);
    });
  }
  result.train_manifest = out_dir / "train_manifest.csv";
  write_manifest(result.train_manifest, result.train);
  if (spec.test_per_class > 0) {
    result.test_manifest = out_dir / "test_manifest.csv";
    write_manifest(result.test_manifest, result.test);
  }
  return result;
}

}  // namespace fsf
