#pragma once

// Preprocessing and distortion stack: noise residual, JPEG quantization
// round trip, Gaussian blur, bilinear downsampling, center crop/pad and the
// randomized training augmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <tuple>

#include "fsf/error.hpp"
#include "fsf/ops.hpp"
#include "fsf/rng.hpp"
#include "fsf/tensor.hpp"

namespace fsf {

inline constexpr std::size_t kResidualMedianWindow = 7;

/// Image minus its median-blurred version, per channel.
inline Image noise_residual(const Image& img, std::size_t window = kResidualMedianWindow) {
  auto blurred = median_filter(img, window);
  Image out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = img[i] - blurred[i];
  return out;
}

// ---------------------------------------------------------------------------
// JPEG: 8x8 block DCT, quality-scaled quantization with the standard
// luminance table, dequantization and inverse DCT. Entropy coding is lossless
// and therefore skipped. Every channel takes the luminance path.

inline constexpr std::array<int, 64> kJpegLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55,  64,
    81, 104, 113, 92, 49, 64,  78,  87,  103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline std::array<int, 64> jpeg_quant_table(int quality) {
  if (quality < 1 || quality > 100) throw ParameterError("JPEG quality must be in [1, 100], got " + std::to_string(quality));
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> q{};
  for (int i = 0; i < 64; ++i) q[std::size_t(i)] = std::clamp((kJpegLumaTable[std::size_t(i)] * scale + 50) / 100, 1, 255);
  return q;
}

namespace detail {

// Orthonormal DCT-II basis: basis[k][n].
inline const std::array<std::array<double, 8>, 8>& dct8_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int k = 0; k < 8; ++k)
      for (int n = 0; n < 8; ++n)
        b[std::size_t(k)][std::size_t(n)] =
            (k == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8)) * std::cos(std::numbers::pi * (2 * n + 1) * k / 16.0);
    return b;
  }();
  return basis;
}

inline void dct8x8(const double* in, double* out) {
  const auto& b = dct8_basis();
  double tmp[64];
  for (int y = 0; y < 8; ++y)
    for (int k = 0; k < 8; ++k) {
      double s = 0;
      for (int n = 0; n < 8; ++n) s += b[std::size_t(k)][std::size_t(n)] * in[y * 8 + n];
      tmp[y * 8 + k] = s;
    }
  for (int k = 0; k < 8; ++k)
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int n = 0; n < 8; ++n) s += b[std::size_t(k)][std::size_t(n)] * tmp[n * 8 + x];
      out[k * 8 + x] = s;
    }
}

inline void idct8x8(const double* in, double* out) {
  const auto& b = dct8_basis();
  double tmp[64];
  for (int y = 0; y < 8; ++y)
    for (int n = 0; n < 8; ++n) {
      double s = 0;
      for (int k = 0; k < 8; ++k) s += b[std::size_t(k)][std::size_t(n)] * in[y * 8 + k];
      tmp[y * 8 + n] = s;
    }
  for (int n = 0; n < 8; ++n)
    for (int x = 0; x < 8; ++x) {
      double s = 0;
      for (int k = 0; k < 8; ++k) s += b[std::size_t(k)][std::size_t(n)] * tmp[k * 8 + x];
      out[n * 8 + x] = s;
    }
}

}  // namespace detail

/// Quantized DCT coefficients (in units of the quantization step) of every
/// 8x8 block of channel `c`, blocks in raster order. Edge blocks replicate
/// the last row/column.
inline std::vector<std::array<int, 64>> jpeg_quantized_blocks(const Image& img, int quality, std::size_t c = 0) {
  const auto q = jpeg_quant_table(quality);
  const std::size_t h = img.height(), w = img.width();
  std::vector<std::array<int, 64>> blocks;
  double px[64], coef[64];
  for (std::size_t by = 0; by < h; by += 8)
    for (std::size_t bx = 0; bx < w; bx += 8) {
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) {
          const double v = img(c, std::min(by + y, h - 1), std::min(bx + x, w - 1));
          px[y * 8 + x] = std::round(std::clamp(v, 0.0, 1.0) * 255.0) - 128.0;
        }
      detail::dct8x8(px, coef);
      std::array<int, 64> qb{};
      for (std::size_t i = 0; i < 64; ++i) qb[i] = int(std::lround(coef[i] / q[i]));
      blocks.push_back(qb);
    }
  return blocks;
}

inline Image jpeg_distort(const Image& img, int quality) {
  require_rank3(img.shape(), "jpeg_distort");
  const auto q = jpeg_quant_table(quality);
  const std::size_t h = img.height(), w = img.width();
  Image out(img.shape());
  double coef[64], px[64];
  for (std::size_t c = 0; c < img.channels(); ++c) {
    const auto blocks = jpeg_quantized_blocks(img, quality, c);
    std::size_t bi = 0;
    for (std::size_t by = 0; by < h; by += 8)
      for (std::size_t bx = 0; bx < w; bx += 8, ++bi) {
        for (std::size_t i = 0; i < 64; ++i) coef[i] = double(blocks[bi][i] * q[i]);
        detail::idct8x8(coef, px);
        for (std::size_t y = 0; y < 8 && by + y < h; ++y)
          for (std::size_t x = 0; x < 8 && bx + x < w; ++x)
            out(c, by + y, bx + x) = std::clamp(std::round(px[y * 8 + x] + 128.0), 0.0, 255.0) / 255.0;
      }
  }
  return out;
}

// ---------------------------------------------------------------------------

/// Normalized sampled Gaussian with radius ceil(3 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma < 0) throw ParameterError("gaussian sigma must be >= 0");
  if (sigma == 0) return {1.0};
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(std::size_t(2 * r + 1));
  double sum = 0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) sum += k[std::size_t(i + r)] = std::exp(-double(i * i) / (2 * sigma * sigma));
  for (auto& v : k) v /= sum;
  return k;
}

inline Image gaussian_blur(const Image& img, double sigma) {
  require_rank3(img.shape(), "gaussian_blur");
  const auto k = gaussian_kernel(sigma);
  if (k.size() == 1) return img;
  const auto r = std::ptrdiff_t(k.size() / 2);
  const auto h = std::ptrdiff_t(img.height()), w = std::ptrdiff_t(img.width());
  Image tmp(img.shape()), out(img.shape());
  for (std::size_t c = 0; c < img.channels(); ++c) {
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double s = 0;
        for (std::ptrdiff_t i = -r; i <= r; ++i) s += k[std::size_t(i + r)] * img(c, std::size_t(y), std::size_t(reflect_index(x + i, w)));
        tmp(c, std::size_t(y), std::size_t(x)) = s;
      }
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double s = 0;
        for (std::ptrdiff_t i = -r; i <= r; ++i) s += k[std::size_t(i + r)] * tmp(c, std::size_t(reflect_index(y + i, h)), std::size_t(x));
        out(c, std::size_t(y), std::size_t(x)) = s;
      }
  }
  return out;
}

/// Bilinear resampling with pixel-center alignment; output extents are
/// ceil(ratio * input).
inline Image downsample(const Image& img, double ratio = 0.5) {
  require_rank3(img.shape(), "downsample");
  if (!(ratio > 0 && ratio <= 1)) throw ParameterError("downsample ratio must be in (0, 1]");
  const std::size_t h = img.height(), w = img.width();
  const auto oh = static_cast<std::size_t>(std::ceil(double(h) * ratio - 1e-9));
  const auto ow = static_cast<std::size_t>(std::ceil(double(w) * ratio - 1e-9));
  Image out(img.channels(), std::max<std::size_t>(oh, 1), std::max<std::size_t>(ow, 1));
  auto coord = [&](std::size_t d, std::size_t n) {
    const double s = std::clamp((double(d) + 0.5) / ratio - 0.5, 0.0, double(n - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    const std::size_t i1 = std::min(i0 + 1, n - 1);
    return std::tuple{i0, i1, s - double(i0)};
  };
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < out.height(); ++y) {
      const auto [y0, y1, fy] = coord(y, h);
      for (std::size_t x = 0; x < out.width(); ++x) {
        const auto [x0, x1, fx] = coord(x, w);
        const double top = (1 - fx) * img(c, y0, x0) + fx * img(c, y0, x1);
        const double bot = (1 - fx) * img(c, y1, x0) + fx * img(c, y1, x1);
        out(c, y, x) = (1 - fy) * top + fy * bot;
      }
    }
  return out;
}

/// Central size x size window; sides shorter than `size` are first
/// reflect-padded symmetrically.
inline Image center_crop_pad(const Image& img, std::size_t size) {
  require_rank3(img.shape(), "center_crop_pad");
  if (size == 0) throw ParameterError("crop size must be positive");
  const auto h = std::ptrdiff_t(img.height()), w = std::ptrdiff_t(img.width()), s = std::ptrdiff_t(size);
  if (h == s && w == s) return img;
  auto offset = [s](std::ptrdiff_t n) { return n >= s ? (n - s) / 2 : -((s - n) / 2); };
  const std::ptrdiff_t oy = offset(h), ox = offset(w);
  Image out(img.channels(), size, size);
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::ptrdiff_t y = 0; y < s; ++y)
      for (std::ptrdiff_t x = 0; x < s; ++x)
        out(c, std::size_t(y), std::size_t(x)) =
            img(c, std::size_t(reflect_index(y + oy, h)), std::size_t(reflect_index(x + ox, w)));
  return out;
}

// ---------------------------------------------------------------------------
// Training augmentation and evaluation distortions.

struct AugmentPolicy {
  double p_jpeg = 0.1;
  double p_blur = 0.1;
  double p_down = 0.1;
  int jpeg_quality_min = 70;
  int jpeg_quality_max = 100;
  double blur_sigma_max = 1.0;
  double down_ratio = 0.5;
  std::size_t crop = 224;
};

inline void validate_policy(const AugmentPolicy& p) {
  for (double v : {p.p_jpeg, p.p_blur, p.p_down})
    if (!(v >= 0 && v <= 1)) throw ParameterError("augmentation probabilities must lie in [0, 1]");
  if (p.jpeg_quality_min < 1 || p.jpeg_quality_max > 100 || p.jpeg_quality_min > p.jpeg_quality_max)
    throw ParameterError("JPEG quality range must lie in [1, 100]");
}

// Which gates fired, and with what parameters.
struct AugmentRecord {
  bool jpeg = false;
  bool blur = false;
  bool down = false;
  int quality = 0;
  double sigma = 0;
};

/// Independent gates in the fixed order jpeg, blur, downsample; the center
/// crop/pad always runs last.
inline Image augment(const Image& img, const AugmentPolicy& policy, Rng& rng, AugmentRecord* record = nullptr) {
  validate_policy(policy);
  AugmentRecord rec;
  Image out = img;
  if (rng.bernoulli(policy.p_jpeg)) {
    rec.jpeg = true;
    rec.quality = int(rng.uniform_int(policy.jpeg_quality_min, policy.jpeg_quality_max));
    out = jpeg_distort(out, rec.quality);
  }
  if (rng.bernoulli(policy.p_blur)) {
    rec.blur = true;
    rec.sigma = rng.uniform(0.0, policy.blur_sigma_max);
    out = gaussian_blur(out, rec.sigma);
  }
  if (rng.bernoulli(policy.p_down)) {
    rec.down = true;
    out = downsample(out, policy.down_ratio);
  }
  if (record) *record = rec;
  return center_crop_pad(out, policy.crop);
}

enum class DistortionKind { none, jpeg, downsample, blur };

struct DistortionConfig {
  DistortionKind kind = DistortionKind::none;
  int jpeg_quality = 95;
  double down_ratio = 0.5;
  double blur_sigma = 1.0;

  std::string name() const {
    switch (kind) {
      case DistortionKind::jpeg:
        return "jpeg" + std::to_string(jpeg_quality);
      case DistortionKind::downsample:
        return down_ratio == 0.5 ? "down0.5" : "down" + std::to_string(down_ratio);
      case DistortionKind::blur:
        return blur_sigma == 1.0 ? "blur1" : "blur" + std::to_string(blur_sigma);
      default:
        return "none";
    }
  }
};

inline DistortionConfig parse_distortion(const std::string& s) {
  DistortionConfig d;
  if (s == "none") return d;
  if (s == "jpeg95" || s == "jpeg") {
    d.kind = DistortionKind::jpeg;
  } else if (s == "down0.5" || s == "downsample") {
    d.kind = DistortionKind::downsample;
  } else if (s == "blur1" || s == "blur") {
    d.kind = DistortionKind::blur;
  } else {
    throw ParameterError("unknown distortion '" + s + "' (none|jpeg95|down0.5|blur1)");
  }
  return d;
}

// The four evaluation conditions: clean, JPEG q=95, downsample 0.5, blur sigma=1.
inline std::vector<DistortionConfig> standard_distortions() {
  return {parse_distortion("none"), parse_distortion("jpeg95"), parse_distortion("down0.5"), parse_distortion("blur1")};
}

inline Image apply_distortion(const Image& img, const DistortionConfig& d) {
  switch (d.kind) {
    case DistortionKind::jpeg:
      return jpeg_distort(img, d.jpeg_quality);
    case DistortionKind::downsample:
      return downsample(img, d.down_ratio);
    case DistortionKind::blur:
      return gaussian_blur(img, d.blur_sigma);
    default:
      return img;
  }
}

}  // namespace fsf
