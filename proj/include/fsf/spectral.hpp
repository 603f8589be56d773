#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/ops.hpp"
#include "fsf/tensor.hpp"

namespace fsf {

// Nonnegative DFT magnitude, C x H x W, unshifted (DC at [0,0]).
struct Spectrum {
  Tensor<double> mag;

  std::size_t channels() const { return mag.channels(); }
  std::size_t height() const { return mag.height(); }
  std::size_t width() const { return mag.width(); }
};

// Quadrant branches in unshifted index order: 00, 01, 10, 11.
using Branches = std::array<Spectrum, 4>;

enum class Measure { mean, log_mean };

inline Measure parse_measure(const std::string& s) {
  if (s == "mean") return Measure::mean;
  if (s == "log_mean" || s == "log-mean") return Measure::log_mean;
  throw ParameterError("unknown self-similarity measure '" + s + "'");
}

inline Spectrum spectrum_of(const Image& image) {
  require_rank3(image.shape(), "spectrum_of");
  return Spectrum{dft2_magnitude(image)};
}

inline Branches quadrant_split(const Spectrum& s) {
  const std::size_t h = s.height(), w = s.width();
  if (h % 2 || w % 2)
    throw DimensionError("quadrant_split needs even extents, got " + std::to_string(h) + "x" + std::to_string(w));
  const std::size_t hh = h / 2, hw = w / 2;
  Branches out;
  for (std::size_t q = 0; q < 4; ++q) {
    const std::size_t oy = (q / 2) * hh, ox = (q % 2) * hw;
    Tensor<double> block(s.channels(), hh, hw);
    for (std::size_t c = 0; c < s.channels(); ++c)
      for (std::size_t y = 0; y < hh; ++y)
        for (std::size_t x = 0; x < hw; ++x) block(c, y, x) = s.mag(c, oy + y, ox + x);
    out[q] = Spectrum{std::move(block)};
  }
  return out;
}

// Inverse of quadrant_split: places the four branches back into one plane.
inline Spectrum quadrant_merge(const Branches& b) {
  const std::size_t c_n = b[0].channels(), hh = b[0].height(), hw = b[0].width();
  Tensor<double> out(c_n, 2 * hh, 2 * hw);
  for (std::size_t q = 0; q < 4; ++q) {
    require_same_shape(b[q].mag.shape(), b[0].mag.shape(), "quadrant_merge");
    const std::size_t oy = (q / 2) * hh, ox = (q % 2) * hw;
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t y = 0; y < hh; ++y)
        for (std::size_t x = 0; x < hw; ++x) out(c, oy + y, ox + x) = b[q].mag(c, y, x);
  }
  return Spectrum{std::move(out)};
}

/// Measure d applied to the Hadamard product of the four branches.
inline double self_similarity(const Spectrum& s, Measure d = Measure::log_mean) {
  const auto b = quadrant_split(s);
  const auto product = elementwise_mul(b[0].mag, b[1].mag, b[2].mag, b[3].mag);
  double acc = 0;
  for (auto v : product.vec()) acc += d == Measure::mean ? v : std::log1p(v);
  return acc / double(product.size());
}

inline Spectrum quadrant_average(const Spectrum& s00, const Spectrum& s01, const Spectrum& s10, const Spectrum& s11) {
  require_same_shape(s00.mag.shape(), s01.mag.shape(), "quadrant_average");
  require_same_shape(s00.mag.shape(), s10.mag.shape(), "quadrant_average");
  require_same_shape(s00.mag.shape(), s11.mag.shape(), "quadrant_average");
  Tensor<double> out(s00.mag.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.25 * (s00.mag[i] + s01.mag[i] + s10.mag[i] + s11.mag[i]);
  return Spectrum{std::move(out)};
}

inline Spectrum quadrant_average(const Branches& b) { return quadrant_average(b[0], b[1], b[2], b[3]); }

struct FractalPyramid {
  std::vector<Spectrum> levels;     // H^(0) .. H^(N)
  std::vector<Branches> branches;   // split of levels[n], n < N
};

inline FractalPyramid fractal_pyramid(const Spectrum& s, std::size_t levels) {
  const std::size_t div = std::size_t{1} << levels;
  if (s.height() % div || s.width() % div)
    throw ParameterError("fractal_pyramid: extents " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                         " not divisible by 2^" + std::to_string(levels));
  FractalPyramid p;
  p.levels.push_back(s);
  for (std::size_t n = 0; n < levels; ++n) {
    p.branches.push_back(quadrant_split(p.levels.back()));
    p.levels.push_back(quadrant_average(p.branches.back()));
  }
  return p;
}

struct SelfSimFeatures {
  std::vector<std::vector<double>> per_level;

  std::vector<double> concatenated() const {
    std::vector<double> out;
    for (const auto& l : per_level) out.insert(out.end(), l.begin(), l.end());
    return out;
  }
};

/// Per-level, per-channel self-similarity statistic over a pyramid whose
/// levels all have even extents.
inline SelfSimFeatures self_similarity_features(const FractalPyramid& p, Measure d = Measure::log_mean) {
  SelfSimFeatures f;
  for (const auto& level : p.levels) {
    std::vector<double> per_channel;
    for (std::size_t c = 0; c < level.channels(); ++c) {
      Tensor<double> one(Shape{1, level.height(), level.width()},
                         std::vector<double>(level.mag.channel(c).begin(), level.mag.channel(c).end()));
      per_channel.push_back(self_similarity(Spectrum{std::move(one)}, d));
    }
    f.per_level.push_back(std::move(per_channel));
  }
  return f;
}

// Rescales a spectrum to unit mean magnitude so statistics compare shape, not energy.
inline Spectrum normalized_to_unit_mean(Spectrum s) {
  double m = 0;
  for (auto v : s.mag.vec()) m += v;
  m /= double(s.mag.size());
  if (m > 0)
    for (auto& v : s.mag.vec()) v /= m;
  return s;
}

inline Spectrum average_of_spectra(std::span<const Spectrum> spectra) {
  if (spectra.empty()) throw DataError("average_spectrum of an empty corpus");
  Tensor<double> acc(spectra[0].mag.shape());
  for (const auto& s : spectra) {
    require_same_shape(s.mag.shape(), acc.shape(), "average_spectrum");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += s.mag[i];
  }
  for (auto& v : acc.vec()) v /= double(spectra.size());
  return Spectrum{std::move(acc)};
}

inline Spectrum average_spectrum(std::span<const Image> corpus) {
  if (corpus.empty()) throw DataError("average_spectrum of an empty corpus");
  std::vector<Spectrum> spectra;
  spectra.reserve(corpus.size());
  for (const auto& img : corpus) {
    require_same_shape(img.shape(), corpus[0].shape(), "average_spectrum");
    spectra.push_back(spectrum_of(img));
  }
  return average_of_spectra(spectra);
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = double(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 && sbb == 0) return 1.0;
  if (saa == 0 || sbb == 0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

/// Mean normalized cross-correlation over the six branch pairs, computed on
/// log(1 + magnitude).
inline double quadrant_correlation(const Spectrum& s) {
  auto b = quadrant_split(s);
  std::array<std::vector<double>, 4> logs;
  for (std::size_t q = 0; q < 4; ++q) {
    logs[q].reserve(b[q].mag.size());
    for (auto v : b[q].mag.vec()) logs[q].push_back(std::log1p(v));
  }
  double acc = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j, ++pairs) acc += pearson(logs[i], logs[j]);
  return acc / pairs;
}

// Moves DC to the center (visualization only).
inline Tensor<double> fftshift(const Tensor<double>& x) {
  require_rank3(x.shape(), "fftshift");
  const std::size_t h = x.height(), w = x.width();
  Tensor<double> out(x.shape());
  for (std::size_t c = 0; c < x.channels(); ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) out(c, (y + h / 2) % h, (xx + w / 2) % w) = x(c, y, xx);
  return out;
}

/// Shifted, log-scaled, max-normalized rendering of channel `c` in [0, 1].
inline Tensor<double> spectrum_display(const Spectrum& s, std::size_t c = 0) {
  Tensor<double> plane(Shape{1, s.height(), s.width()},
                       std::vector<double>(s.mag.channel(c).begin(), s.mag.channel(c).end()));
  for (auto& v : plane.vec()) v = std::log1p(v);
  plane = fftshift(plane);
  double peak = 0;
  for (auto v : plane.vec()) peak = std::max(peak, v);
  if (peak > 0)
    for (auto& v : plane.vec()) v /= peak;
  return plane;
}

}  // namespace fsf
