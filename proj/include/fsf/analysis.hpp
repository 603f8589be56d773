#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/forensics.hpp"
#include "fsf/image_io.hpp"
#include "fsf/manifest.hpp"
#include "fsf/parallel.hpp"
#include "fsf/simulate.hpp"
#include "fsf/spectral.hpp"

namespace fsf {

// ---------------------------------------------------------------------------
// Hand-crafted self-similarity features.

struct HandcraftedOptions {
  std::size_t levels = 2;  // pyramid levels below the full spectrum
  Measure measure = Measure::log_mean;
  bool residual = true;
};

inline Image grayscale_of(const Image& img) { return img.channels() == 1 ? img : to_grayscale(img); }

/// One statistic per pyramid level H^(0) .. H^(levels), computed on the
/// unit-mean magnitude spectrum of the (residual) grayscale image.
inline std::vector<double> handcrafted_features(const Image& img, const HandcraftedOptions& o = {}) {
  const std::size_t div = std::size_t{2} << o.levels;
  if (img.height() % div || img.width() % div)
    throw DataError("image " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                    " is not divisible by " + std::to_string(div) + " for " + std::to_string(o.levels) + " levels");
  const Image gray = grayscale_of(img);
  const auto s = normalized_to_unit_mean(spectrum_of(o.residual ? noise_residual(gray) : gray));
  const auto f = self_similarity_features(fractal_pyramid(s, o.levels), o.measure);
  std::vector<double> out;
  for (const auto& level : f.per_level) out.push_back(level.front());
  return out;
}

// ---------------------------------------------------------------------------
// Average spectra per manifest group.

struct GroupSpectrum {
  std::string group;  // pipeline id; reals are "real"
  std::size_t count = 0;
  Spectrum average;
  double quadrant_correlation = 0;
  double self_similarity = 0;  // log-mean statistic of the unit-mean average
};

inline std::vector<GroupSpectrum> group_average_spectra(const CorpusManifest& m, bool residual) {
  if (m.entries.empty()) throw DataError("manifest has no entries");
  std::vector<Spectrum> spectra(m.entries.size());
  parallel_for(m.entries.size(), [&](std::size_t i) {
    const Image gray = grayscale_of(read_pnm(m.resolve(m.entries[i])));
    spectra[i] = spectrum_of(residual ? noise_residual(gray) : gray);
  });
  std::map<std::string, std::vector<Spectrum>> groups;
  for (std::size_t i = 0; i < spectra.size(); ++i) {
    const auto& e = m.entries[i];
    groups[e.label == Label::real ? "real" : e.pipeline].push_back(std::move(spectra[i]));
  }
  std::vector<GroupSpectrum> out;
  for (auto& [name, list] : groups) {
    GroupSpectrum g;
    g.group = name;
    g.count = list.size();
    g.average = average_of_spectra(list);
    g.quadrant_correlation = quadrant_correlation(g.average);
    if (g.average.height() % 2 == 0 && g.average.width() % 2 == 0)
      g.self_similarity = self_similarity(normalized_to_unit_mean(g.average));
    out.push_back(std::move(g));
  }
  return out;
}

// log(1 + |F|) scaled by its 99.5th percentile and clipped to [0, 1], so a
// few dominant bins do not blacken the rest. Unshifted unless asked.
inline Image spectrum_panel(const Spectrum& s, bool shifted = false) {
  Image plane(Shape{1, s.height(), s.width()}, std::vector<double>(s.mag.channel(0).begin(), s.mag.channel(0).end()));
  for (auto& v : plane.vec()) v = std::log1p(v);
  if (shifted) plane = fftshift(plane);
  auto sorted = plane.vec();
  const auto k = std::size_t(0.995 * double(sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + std::ptrdiff_t(k), sorted.end());
  const double top = sorted[k];
  for (auto& v : plane.vec()) v = top > 0 ? std::min(v / top, 1.0) : 0.0;
  return plane;
}

// ---------------------------------------------------------------------------
// Fractal formation demo: one watermarked base image upsampled by each kind.

struct DemoSpec {
  std::size_t base_size = 28;
  std::size_t stages = 3;
  std::uint64_t seed = 1;
  double amplitude = 4.0;  // glyph boost, in units of the base's mean AC magnitude
  bool nonlinearity = true;
};

inline void validate_demo_spec(const DemoSpec& d) {
  if (d.base_size < 16 || d.base_size % 2) throw ConfigError("demo base_size must be even and at least 16");
  if (d.stages < 1 || d.stages > 5) throw ConfigError("demo stages must lie in [1, 5]");
  if (!(d.amplitude > 0)) throw ConfigError("demo amplitude must be positive");
}

struct GlyphBox {
  std::size_t top = 0, left = 0, height = 0, width = 0;
};

// Inside the low-frequency quadrant of the unshifted base spectrum, clear of
// its conjugate mirror.
inline GlyphBox demo_glyph_box(std::size_t base) {
  const std::size_t margin = 1 + base / 16;
  const std::size_t side = (3 * base) / 8;
  return {margin, margin, side, side};
}

inline constexpr double kGlyphVisibleContrast = 0.5;

/// Mean log(1 + |F|) on glyph bins minus the mean over the rest of the glyph
/// box, for every base-sized tile of the spectrum (row-major tiles).
inline std::vector<double> glyph_tile_contrast(const Spectrum& s, const Tensor<double>& glyph, const GlyphBox& box) {
  const std::size_t base = glyph.height();
  if (s.height() % base || s.width() % base) throw DimensionError("spectrum is not a whole number of glyph tiles");
  std::vector<double> out;
  for (std::size_t ty = 0; ty < s.height() / base; ++ty)
    for (std::size_t tx = 0; tx < s.width() / base; ++tx) {
      double on = 0, off = 0;
      std::size_t n_on = 0, n_off = 0;
      for (std::size_t y = box.top; y < box.top + box.height; ++y)
        for (std::size_t x = box.left; x < box.left + box.width; ++x) {
          const double v = std::log1p(s.mag(0, ty * base + y, tx * base + x));
          if (glyph(0, y, x) > 0) {
            on += v;
            ++n_on;
          } else {
            off += v;
            ++n_off;
          }
        }
      out.push_back(on / double(n_on) - off / double(n_off));
    }
  return out;
}

struct DemoPanel {
  std::string pipeline;
  std::size_t stage = 0;
  Image image;        // viewable, in [0, 1]
  Spectrum spectrum;  // of the raw stage output
  double quadrant_correlation = 0;
  std::size_t glyph_copies = 0;  // tiles whose contrast reaches kGlyphVisibleContrast
  double glyph_contrast_min = 0;
};

struct FractalDemo {
  DemoSpec spec;
  Tensor<double> glyph;
  GlyphBox box;
  std::vector<std::string> rows;
  std::vector<DemoPanel> panels;  // row-major, stages + 1 per row

  const DemoPanel& at(std::size_t row, std::size_t stage) const { return panels[row * (spec.stages + 1) + stage]; }
};

inline FractalDemo fractal_demo(const DemoSpec& spec) {
  validate_demo_spec(spec);
  FractalDemo demo;
  demo.spec = spec;
  const std::size_t b = spec.base_size;
  demo.box = demo_glyph_box(b);
  demo.glyph = letter_a_glyph(b, b, demo.box.top, demo.box.left, demo.box.height, demo.box.width);

  const Image raw = synth_real(mix_seed(spec.seed, 0), b, b);
  const auto raw_mag = spectrum_of(raw).mag;
  double ac = 0;
  for (std::size_t i = 1; i < raw_mag.size(); ++i) ac += raw_mag[i];
  ac /= double(raw_mag.size() - 1);
  Image base = embed_spectral_watermark(raw, demo.glyph, spec.amplitude * ac);
  for (auto& v : base.vec()) v = std::clamp(v, 0.0, 1.0);

  for (auto kind : {UpsampleKind::zero_insert, UpsampleKind::nearest, UpsampleKind::tconv_conv}) {
    PipelineConfig cfg;
    cfg.kind = kind;
    cfg.depth = spec.stages;
    cfg.seed = mix_seed(spec.seed, 1);
    cfg.base_height = cfg.base_width = b;
    cfg.nonlinearity = spec.nonlinearity;
    const auto stages = upsample_stages(base, cfg);
    demo.rows.push_back(kind_name(kind));
    for (std::size_t k = 0; k < stages.size(); ++k) {
      DemoPanel p;
      p.pipeline = kind_name(kind);
      p.stage = k;
      p.spectrum = spectrum_of(stages[k]);
      p.image = kind == UpsampleKind::tconv_conv && k > 0 ? match_moments(stages[k], base) : stages[k];
      p.quadrant_correlation = quadrant_correlation(p.spectrum);
      const auto contrast = glyph_tile_contrast(p.spectrum, demo.glyph, demo.box);
      p.glyph_contrast_min = *std::min_element(contrast.begin(), contrast.end());
      p.glyph_copies = std::size_t(
          std::count_if(contrast.begin(), contrast.end(), [](double c) { return c >= kGlyphVisibleContrast; }));
      demo.panels.push_back(std::move(p));
    }
  }
  return demo;
}

/// Rows of panels, each scaled up (nearest) to the size of the last stage,
/// separated by white gutters.
inline Image compose_grid(const std::vector<std::vector<Image>>& rows, std::size_t gap = 4) {
  if (rows.empty() || rows.front().empty()) throw ParameterError("compose_grid: no panels");
  std::size_t cell = 0;
  for (const auto& r : rows)
    for (const auto& p : r) cell = std::max(cell, std::max(p.height(), p.width()));
  const std::size_t cols = rows.front().size();
  Image grid(1, rows.size() * cell + (rows.size() + 1) * gap, cols * cell + (cols + 1) * gap, 1.0);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      const Image& p = rows[r][c];
      const std::size_t oy = gap + r * (cell + gap), ox = gap + c * (cell + gap);
      for (std::size_t y = 0; y < cell; ++y)
        for (std::size_t x = 0; x < cell; ++x) grid(0, oy + y, ox + x) = p(0, y * p.height() / cell, x * p.width() / cell);
    }
  return grid;
}

inline std::string demo_file_stem(const DemoPanel& p) { return p.pipeline + "_stage" + std::to_string(p.stage); }

/// Writes spectrum and image panels, the composite grid, and captions.csv.
inline void write_fractal_demo(const FractalDemo& demo, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::vector<Image>> grid(demo.rows.size());
  for (std::size_t r = 0; r < demo.rows.size(); ++r)
    for (std::size_t k = 0; k <= demo.spec.stages; ++k) {
      const auto& p = demo.at(r, k);
      grid[r].push_back(spectrum_panel(p.spectrum));
      write_pnm(dir / ("spectrum_" + demo_file_stem(p) + ".pgm"), grid[r].back(), 8);
      write_pnm(dir / ("image_" + demo_file_stem(p) + ".pgm"), p.image, 8);
    }
  write_pnm(dir / "fractal_grid.pgm", compose_grid(grid), 8);

  std::ofstream cap(dir / "captions.csv");
  if (!cap) throw IoError("cannot write " + (dir / "captions.csv").string());
  cap << "file,image,pipeline,stage,size,grid_row,grid_col,quadrant_correlation,glyph_copies,glyph_contrast_min\n";
  for (std::size_t r = 0; r < demo.rows.size(); ++r)
    for (std::size_t k = 0; k <= demo.spec.stages; ++k) {
      const auto& p = demo.at(r, k);
      char buf[128];
      std::snprintf(buf, sizeof buf, "%.6f,%zu,%.6f", p.quadrant_correlation, p.glyph_copies, p.glyph_contrast_min);
      cap << "spectrum_" << demo_file_stem(p) << ".pgm,image_" << demo_file_stem(p) << ".pgm," << p.pipeline << ','
          << k << ',' << p.spectrum.height() << ',' << r << ',' << k << ',' << buf << '\n';
    }
  if (!cap) throw IoError("write failed for captions.csv");
}

}  // namespace fsf
