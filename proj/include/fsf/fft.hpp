#pragma once

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <vector>

#include "fsf/error.hpp"

namespace fsf {

using cplx = std::complex<double>;

namespace detail {

// Largest prime handled by a direct radix-p butterfly; lengths with a larger
// prime factor go through Bluestein's chirp-z reduction.
inline constexpr std::size_t kMaxDirectRadix = 13;

inline std::vector<std::size_t> factorize(std::size_t n) {
  std::vector<std::size_t> f;
  for (std::size_t p : {4u, 2u, 3u, 5u}) {
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  }
  for (std::size_t p = 7; p * p <= n; p += 2) {
    while (n % p == 0) {
      f.push_back(p);
      n /= p;
    }
  }
  if (n > 1) f.push_back(n);
  return f;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t m = 1;
  while (m < n) m <<= 1;
  return m;
}

}  // namespace detail

// One-dimensional complex DFT plan for a fixed length. Forward transform is
// X[k] = sum_j x[j] exp(-2 pi i jk / n); inverse is unnormalized.
class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n) {
    if (n == 0) throw DimensionError("FFT length must be positive");
    twiddle_.resize(n);
    for (std::size_t j = 0; j < n; ++j) twiddle_[j] = std::polar(1.0, -2.0 * std::numbers::pi * double(j) / double(n));
    factors_ = detail::factorize(n);
    for (auto f : factors_)
      if (f > detail::kMaxDirectRadix) bluestein_ = true;
    if (bluestein_) init_bluestein();
  }

  std::size_t size() const noexcept { return n_; }
  bool uses_bluestein() const noexcept { return bluestein_; }

  // In-place transform of `data` (length n). `scratch` is resized as needed.
  void transform(std::span<cplx> data, bool inverse, std::vector<cplx>& scratch) const {
    if (data.size() != n_) throw DimensionError("FFT plan length mismatch");
    if (n_ == 1) return;
    if (inverse)
      for (auto& v : data) v = std::conj(v);
    if (bluestein_) {
      run_bluestein(data, scratch);
    } else {
      scratch.assign(data.begin(), data.end());
      recurse(scratch.data(), 1, data.data(), n_, 0);
    }
    if (inverse)
      for (auto& v : data) v = std::conj(v);
  }

 private:
  // Decimation in time: `out[0..n)` receives the DFT of in[0], in[stride], ...
  void recurse(const cplx* in, std::size_t stride, cplx* out, std::size_t n, std::size_t level) const {
    if (n == 1) {
      out[0] = in[0];
      return;
    }
    const std::size_t p = factors_[level];
    const std::size_t m = n / p;
    for (std::size_t q = 0; q < p; ++q) recurse(in + q * stride, stride * p, out + q * m, m, level + 1);

    const std::size_t tw_step = n_ / n;   // W_n^e = twiddle_[e * tw_step]
    const std::size_t root_step = n_ / p;  // W_p^e = twiddle_[e * root_step]
    if (p == 2) {
      for (std::size_t k = 0; k < m; ++k) {
        const cplx a = out[k];
        const cplx b = out[k + m] * twiddle_[k * tw_step];
        out[k] = a + b;
        out[k + m] = a - b;
      }
      return;
    }
    if (p == 4) {
      for (std::size_t k = 0; k < m; ++k) {
        const cplx a0 = out[k];
        const cplx a1 = out[k + m] * twiddle_[k * tw_step];
        const cplx a2 = out[k + 2 * m] * twiddle_[2 * k * tw_step];
        const cplx a3 = out[k + 3 * m] * twiddle_[3 * k * tw_step];
        const cplx s02 = a0 + a2, d02 = a0 - a2;
        const cplx s13 = a1 + a3, d13 = a1 - a3;
        const cplx d13_rot(d13.imag(), -d13.real());  // -i * d13
        out[k] = s02 + s13;
        out[k + m] = d02 + d13_rot;
        out[k + 2 * m] = s02 - s13;
        out[k + 3 * m] = d02 - d13_rot;
      }
      return;
    }
    cplx tmp[detail::kMaxDirectRadix];
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t q = 0; q < p; ++q) tmp[q] = out[q * m + k] * twiddle_[(q * k % n) * tw_step];
      for (std::size_t r = 0; r < p; ++r) {
        cplx acc = tmp[0];
        for (std::size_t q = 1; q < p; ++q) acc += tmp[q] * twiddle_[(q * r % p) * root_step];
        out[k + r * m] = acc;
      }
    }
  }

  void init_bluestein() {
    const std::size_t m = detail::next_pow2(2 * n_ - 1);
    inner_ = std::make_unique<FftPlan>(m);
    chirp_.resize(n_);
    for (std::size_t k = 0; k < n_; ++k) {
      const auto k2 = static_cast<unsigned long long>(k) * k % (2 * n_);
      chirp_[k] = std::polar(1.0, -std::numbers::pi * double(k2) / double(n_));
    }
    std::vector<cplx> b(m, cplx(0));
    b[0] = std::conj(chirp_[0]);
    for (std::size_t k = 1; k < n_; ++k) b[k] = b[m - k] = std::conj(chirp_[k]);
    std::vector<cplx> scratch;
    inner_->transform(b, false, scratch);
    kernel_spectrum_ = std::move(b);
  }

  void run_bluestein(std::span<cplx> data, std::vector<cplx>& scratch) const {
    const std::size_t m = inner_->size();
    std::vector<cplx> a(m, cplx(0));
    for (std::size_t k = 0; k < n_; ++k) a[k] = data[k] * chirp_[k];
    inner_->transform(a, false, scratch);
    for (std::size_t k = 0; k < m; ++k) a[k] *= kernel_spectrum_[k];
    inner_->transform(a, true, scratch);
    const double inv_m = 1.0 / double(m);
    for (std::size_t k = 0; k < n_; ++k) data[k] = a[k] * inv_m * chirp_[k];
  }

  std::size_t n_;
  std::vector<cplx> twiddle_;
  std::vector<std::size_t> factors_;
  bool bluestein_ = false;
  std::unique_ptr<FftPlan> inner_;
  std::vector<cplx> chirp_;
  std::vector<cplx> kernel_spectrum_;
};

// Per-thread plan cache so concurrent callers never share mutable state.
inline const FftPlan& fft_plan(std::size_t n) {
  thread_local std::map<std::size_t, std::unique_ptr<FftPlan>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<FftPlan>(n);
  return *slot;
}

// In-place 2D DFT of a row-major h x w complex array (rows, then columns).
inline void fft2_inplace(std::span<cplx> data, std::size_t h, std::size_t w, bool inverse = false) {
  if (h == 0 || w == 0) throw DimensionError("dft2 of empty plane");
  if (data.size() != h * w) throw DimensionError("dft2: data length does not match h*w");
  std::vector<cplx> scratch;
  const auto& row_plan = fft_plan(w);
  for (std::size_t y = 0; y < h; ++y) row_plan.transform(data.subspan(y * w, w), inverse, scratch);
  if (h == 1) return;
  const auto& col_plan = fft_plan(h);
  std::vector<cplx> col(h);
  for (std::size_t x = 0; x < w; ++x) {
    for (std::size_t y = 0; y < h; ++y) col[y] = data[y * w + x];
    col_plan.transform(col, inverse, scratch);
    for (std::size_t y = 0; y < h; ++y) data[y * w + x] = col[y];
  }
}

struct ComplexPlane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> re;
  std::vector<double> im;
};

template <typename T>
std::vector<cplx> dft2_complex(std::span<const T> plane, std::size_t h, std::size_t w) {
  if (h == 0 || w == 0) throw DimensionError("dft2 of empty plane");
  if (plane.size() != h * w) throw DimensionError("dft2: data length does not match h*w");
  std::vector<cplx> buf(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i) buf[i] = cplx(static_cast<double>(plane[i]), 0.0);
  fft2_inplace(buf, h, w);
  return buf;
}

/// Unshifted 2D DFT of a real plane (DC at [0,0]).
template <typename T>
ComplexPlane dft2(std::span<const T> plane, std::size_t h, std::size_t w) {
  auto buf = dft2_complex(plane, h, w);
  ComplexPlane out{h, w, std::vector<double>(buf.size()), std::vector<double>(buf.size())};
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.re[i] = buf[i].real();
    out.im[i] = buf[i].imag();
  }
  return out;
}

template <typename T>
std::vector<double> dft2_magnitude(std::span<const T> plane, std::size_t h, std::size_t w) {
  auto buf = dft2_complex(plane, h, w);
  std::vector<double> mag(buf.size());
  for (std::size_t i = 0; i < buf.size(); ++i) mag[i] = std::abs(buf[i]);
  return mag;
}

// Real part of the normalized inverse DFT.
inline std::vector<double> idft2_real(std::vector<cplx> spectrum, std::size_t h, std::size_t w) {
  fft2_inplace(spectrum, h, w, true);
  std::vector<double> out(spectrum.size());
  const double scale = 1.0 / double(h * w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = spectrum[i].real() * scale;
  return out;
}

}  // namespace fsf
