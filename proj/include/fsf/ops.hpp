#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/fft.hpp"
#include "fsf/tensor.hpp"

namespace fsf {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kNormEps = 1e-5;
// DFT bins with magnitude below this get zero gradient.
inline constexpr double kMagEps = 1e-12;

// Reflect-101 border index (abc|b a for index -1 -> 1).
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  return i >= n ? period - i : i;
}

// ---------------------------------------------------------------------------
// DFT magnitude and its gradient, per channel of a C x H x W tensor.

template <typename T>
Tensor<T> dft2_magnitude(const Tensor<T>& x) {
  require_rank3(x.shape(), "dft2_magnitude");
  Tensor<T> out(x.shape());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto mag = dft2_magnitude(x.channel(c), x.height(), x.width());
    std::copy(mag.begin(), mag.end(), out.channel(c).begin());
  }
  return out;
}

/// Gradient of sum(upstream * |DFT(x)|) with respect to a real plane x.
template <typename T>
std::vector<double> dft2_magnitude_backward(cspan<T> plane, cspan<T> upstream, std::size_t h,
                                            std::size_t w) {
  if (upstream.size() != plane.size()) throw DimensionError("dft2_magnitude_backward: upstream length");
  auto z = dft2_complex(plane, h, w);
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double m = std::abs(z[k]);
    z[k] = m > kMagEps ? std::conj(z[k] * (static_cast<double>(upstream[k]) / m)) : cplx(0);
  }
  fft2_inplace(z, h, w);
  std::vector<double> grad(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) grad[i] = z[i].real();
  return grad;
}

template <typename T>
Tensor<T> dft2_magnitude_backward(const Tensor<T>& x, const Tensor<T>& upstream) {
  require_same_shape(x.shape(), upstream.shape(), "dft2_magnitude_backward");
  Tensor<T> grad(x.shape());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto g = dft2_magnitude_backward<T>(x.channel(c), upstream.channel(c), x.height(), x.width());
    std::copy(g.begin(), g.end(), grad.channel(c).begin());
  }
  return grad;
}

// ---------------------------------------------------------------------------
// 3x3 convolution, stride 1, zero padding 1 (cross-correlation). Kernels are
// O x C x 3 x 3, bias has O entries.

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unfolds C x H x W into a (C*9) x (H*W) patch matrix.
template <typename T>
RowMat<T> im2col3x3(const Tensor<T>& x) {
  const std::size_t c_n = x.channels(), h = x.height(), w = x.width();
  RowMat<T> col = RowMat<T>::Zero(Eigen::Index(c_n * 9), Eigen::Index(h * w));
  for (std::size_t c = 0; c < c_n; ++c) {
    const T* src = x.channel(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        T* dst = col.row(Eigen::Index(c * 9 + ky * 3 + kx)).data();
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = std::ptrdiff_t(y) + ky - 1;
          if (sy < 0 || sy >= std::ptrdiff_t(h)) continue;
          const std::size_t x0 = kx == 0 ? 1 : 0;
          const std::size_t x1 = kx == 2 ? w - 1 : w;
          for (std::size_t xx = x0; xx < x1; ++xx) dst[y * w + xx] = src[std::size_t(sy) * w + xx + kx - 1];
        }
      }
    }
  }
  return col;
}

template <typename T>
void col2im3x3_add(const RowMat<T>& col, Tensor<T>& x) {
  const std::size_t c_n = x.channels(), h = x.height(), w = x.width();
  for (std::size_t c = 0; c < c_n; ++c) {
    T* dst = x.channel(c).data();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const T* src = col.row(Eigen::Index(c * 9 + ky * 3 + kx)).data();
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = std::ptrdiff_t(y) + ky - 1;
          if (sy < 0 || sy >= std::ptrdiff_t(h)) continue;
          const std::size_t x0 = kx == 0 ? 1 : 0;
          const std::size_t x1 = kx == 2 ? w - 1 : w;
          for (std::size_t xx = x0; xx < x1; ++xx) dst[std::size_t(sy) * w + xx + kx - 1] += src[y * w + xx];
        }
      }
    }
  }
}

inline void check_conv_shapes(const Shape& in, const Shape& k, std::size_t bias_len) {
  require_rank3(in, "conv2d input");
  if (k.size() != 4 || k[2] != 3 || k[3] != 3) throw DimensionError("conv2d kernels must be O x C x 3 x 3, got " + shape_str(k));
  if (k[1] != in[0])
    throw DimensionError("conv2d channel mismatch: input has " + std::to_string(in[0]) + ", kernels expect " +
                         std::to_string(k[1]));
  if (bias_len != k[0]) throw DimensionError("conv2d bias length mismatch");
}

template <typename T>
Tensor<T> conv2d_from_col(const RowMat<T>& col, const Tensor<T>& kernels, cspan<T> bias, std::size_t h,
                          std::size_t w) {
  const std::size_t o_n = kernels.dim(0), k_n = kernels.dim(1) * 9;
  Tensor<T> out(o_n, h, w);
  Eigen::Map<const RowMat<T>> wm(kernels.data(), Eigen::Index(o_n), Eigen::Index(k_n));
  Eigen::Map<RowMat<T>> om(out.data(), Eigen::Index(o_n), Eigen::Index(h * w));
  om.noalias() = wm * col;
  for (std::size_t o = 0; o < o_n; ++o) om.row(Eigen::Index(o)).array() += bias[o];
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, cspan<T> bias) {
  check_conv_shapes(input.shape(), kernels.shape(), bias.size());
  return conv2d_from_col(im2col3x3(input), kernels, bias, input.height(), input.width());
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> kernels;
  std::vector<T> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward_from_col(const RowMat<T>& col, const Shape& input_shape, const Tensor<T>& kernels,
                                      const Tensor<T>& upstream, bool need_input_grad = true) {
  const std::size_t o_n = kernels.dim(0), k_n = kernels.dim(1) * 9;
  const std::size_t hw = input_shape[1] * input_shape[2];
  if (upstream.shape() != Shape{o_n, input_shape[1], input_shape[2]})
    throw DimensionError("conv2d_backward upstream shape " + shape_str(upstream.shape()));
  ConvGrads<T> g{Tensor<T>(input_shape), Tensor<T>(kernels.shape()), std::vector<T>(o_n)};
  Eigen::Map<const RowMat<T>> um(upstream.data(), Eigen::Index(o_n), Eigen::Index(hw));
  Eigen::Map<RowMat<T>> gw(g.kernels.data(), Eigen::Index(o_n), Eigen::Index(k_n));
  gw.noalias() = um * col.transpose();
  // plain loop: Eigen's vectorized sum depends on buffer alignment
  for (std::size_t o = 0; o < o_n; ++o) {
    T s = 0;
    for (const T* p = upstream.data() + o * hw, *e = p + hw; p != e; ++p) s += *p;
    g.bias[o] = s;
  }
  if (need_input_grad) {
    Eigen::Map<const RowMat<T>> wm(kernels.data(), Eigen::Index(o_n), Eigen::Index(k_n));
    RowMat<T> gcol = wm.transpose() * um;
    col2im3x3_add(gcol, g.input);
  }
  return g;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& upstream) {
  check_conv_shapes(input.shape(), kernels.shape(), kernels.dim(0));
  return conv2d_backward_from_col(im2col3x3(input), input.shape(), kernels, upstream);
}

// ---------------------------------------------------------------------------
// Transposed convolution, 4x4 kernel, stride 2, padding 1: C x H x W -> O x 2H x 2W.
// Kernels are C x O x 4 x 4. Evaluated as a gather over the zero-inserted
// input with the flipped kernel, so it matches that formulation bit for bit.

template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& input, const Tensor<T>& kernels) {
  require_rank3(input.shape(), "transposed_conv2d input");
  if (kernels.rank() != 4 || kernels.dim(2) != 4 || kernels.dim(3) != 4 || kernels.dim(0) != input.channels())
    throw DimensionError("transposed_conv2d kernels must be C x O x 4 x 4, got " + shape_str(kernels.shape()));
  const std::size_t c_n = input.channels(), o_n = kernels.dim(1);
  const std::ptrdiff_t h = std::ptrdiff_t(input.height()), w = std::ptrdiff_t(input.width());
  const std::ptrdiff_t oh = 2 * h, ow = 2 * w;
  Tensor<T> out(o_n, std::size_t(oh), std::size_t(ow));
  for (std::size_t o = 0; o < o_n; ++o) {
    for (std::ptrdiff_t yy = 0; yy < oh; ++yy) {
      for (std::ptrdiff_t xx = 0; xx < ow; ++xx) {
        T acc = 0;
        for (std::size_t c = 0; c < c_n; ++c) {
          for (std::ptrdiff_t ty = 0; ty < 4; ++ty) {
            const std::ptrdiff_t zy = yy + ty - 2;
            if (zy < 0 || zy >= oh || (zy & 1)) continue;
            for (std::ptrdiff_t tx = 0; tx < 4; ++tx) {
              const std::ptrdiff_t zx = xx + tx - 2;
              if (zx < 0 || zx >= ow || (zx & 1)) continue;
              acc += input(c, std::size_t(zy / 2), std::size_t(zx / 2)) *
                     kernels[((c * o_n + o) * 4 + std::size_t(3 - ty)) * 4 + std::size_t(3 - tx)];
            }
          }
        }
        out(o, std::size_t(yy), std::size_t(xx)) = acc;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Median filter over a k x k window with reflect-101 borders, per channel.

template <typename T>
Tensor<T> median_filter(const Tensor<T>& x, std::size_t k) {
  require_rank3(x.shape(), "median_filter");
  if (k % 2 == 0) throw ParameterError("median_filter window must be odd, got " + std::to_string(k));
  if (k == 1) return x;
  const std::ptrdiff_t r = std::ptrdiff_t(k / 2);
  const std::ptrdiff_t h = std::ptrdiff_t(x.height()), w = std::ptrdiff_t(x.width());
  Tensor<T> out(x.shape());
  std::vector<T> window(k * k);
  std::vector<std::ptrdiff_t> xs(std::size_t(w + 2 * r));
  for (std::ptrdiff_t i = 0; i < w + 2 * r; ++i) xs[std::size_t(i)] = reflect_index(i - r, w);
  const std::size_t mid = k * k / 2;
  for (std::size_t c = 0; c < x.channels(); ++c) {
    const auto src = x.channel(c);
    auto dst = out.channel(c);
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
        std::size_t n = 0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const std::size_t row = std::size_t(reflect_index(y + dy, h) * w);
          for (std::ptrdiff_t dx = 0; dx < std::ptrdiff_t(k); ++dx) window[n++] = src[row + std::size_t(xs[std::size_t(xx + dx)])];
        }
        std::nth_element(window.begin(), window.begin() + std::ptrdiff_t(mid), window.end());
        dst[std::size_t(y * w + xx)] = window[mid];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations and normalization.

template <typename T>
Tensor<T> leaky_relu(Tensor<T> x, double slope = kLeakySlope) {
  const T s = T(slope);
  for (auto& v : x.vec()) v = v >= T(0) ? v : s * v;
  return x;
}

/// Gate is evaluated on the pre-activation input.
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& input, Tensor<T> upstream, double slope = kLeakySlope) {
  require_same_shape(input.shape(), upstream.shape(), "leaky_relu_backward");
  const T s = T(slope);
  for (std::size_t i = 0; i < input.size(); ++i)
    if (input[i] < T(0)) upstream[i] *= s;
  return upstream;
}

// Per-channel statistics retained from the forward pass.
template <typename T>
struct NormCache {
  Tensor<T> normalized;       // x_hat
  std::vector<T> inv_std;     // 1 / sqrt(var + eps), per channel
};

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, cspan<T> gain, cspan<T> bias, double eps = kNormEps,
                        NormCache<T>* cache = nullptr) {
  require_rank3(x.shape(), "instance_norm");
  const std::size_t c_n = x.channels(), hw = x.plane_size();
  if (hw < 2) throw ParameterError("instance_norm needs at least 2 spatial positions");
  if (gain.size() != c_n || bias.size() != c_n) throw DimensionError("instance_norm affine length mismatch");
  Tensor<T> out(x.shape());
  NormCache<T> local;
  NormCache<T>& nc = cache ? *cache : local;
  nc.normalized = Tensor<T>(x.shape());
  nc.inv_std.assign(c_n, T(0));
  for (std::size_t c = 0; c < c_n; ++c) {
    const auto src = x.channel(c);
    double mean = 0;
    for (auto v : src) mean += double(v);
    mean /= double(hw);
    double var = 0;
    for (auto v : src) var += (double(v) - mean) * (double(v) - mean);
    var /= double(hw);
    const double inv = 1.0 / std::sqrt(var + eps);
    nc.inv_std[c] = T(inv);
    auto xh = nc.normalized.channel(c);
    auto dst = out.channel(c);
    for (std::size_t i = 0; i < hw; ++i) {
      xh[i] = T((double(src[i]) - mean) * inv);
      dst[i] = gain[c] * xh[i] + bias[c];
    }
  }
  return out;
}

template <typename T>
struct NormGrads {
  Tensor<T> input;
  std::vector<T> gain;
  std::vector<T> bias;
};

template <typename T>
NormGrads<T> instance_norm_backward(const NormCache<T>& cache, cspan<T> gain, const Tensor<T>& upstream) {
  require_same_shape(cache.normalized.shape(), upstream.shape(), "instance_norm_backward");
  const std::size_t c_n = upstream.channels(), hw = upstream.plane_size();
  NormGrads<T> g{Tensor<T>(upstream.shape()), std::vector<T>(c_n), std::vector<T>(c_n)};
  for (std::size_t c = 0; c < c_n; ++c) {
    const auto dy = upstream.channel(c);
    const auto xh = cache.normalized.channel(c);
    double sum_dy = 0, sum_dy_xh = 0;
    for (std::size_t i = 0; i < hw; ++i) {
      sum_dy += double(dy[i]);
      sum_dy_xh += double(dy[i]) * double(xh[i]);
    }
    g.bias[c] = T(sum_dy);
    g.gain[c] = T(sum_dy_xh);
    const double gm = double(gain[c]);
    const double mean_d = gm * sum_dy / double(hw);
    const double mean_dx = gm * sum_dy_xh / double(hw);
    const double inv = double(cache.inv_std[c]);
    auto dx = g.input.channel(c);
    for (std::size_t i = 0; i < hw; ++i) dx[i] = T(inv * (gm * double(dy[i]) - mean_d - double(xh[i]) * mean_dx));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Hadamard product of N equally shaped tensors, and its gradient.

template <typename T>
Tensor<T> elementwise_mul(std::span<const Tensor<T>* const> factors) {
  if (factors.empty()) throw ParameterError("elementwise_mul needs at least one factor");
  Tensor<T> out = *factors[0];
  for (std::size_t f = 1; f < factors.size(); ++f) {
    require_same_shape(out.shape(), factors[f]->shape(), "elementwise_mul");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*factors[f])[i];
  }
  return out;
}

template <typename T, typename... Rest>
Tensor<T> elementwise_mul(const Tensor<T>& first, const Rest&... rest) {
  const Tensor<T>* ptrs[] = {&first, &rest...};
  return elementwise_mul<T>(std::span<const Tensor<T>* const>(ptrs));
}

/// grads[i] = upstream * prod_{j != i} factors[j].
template <typename T>
std::vector<Tensor<T>> elementwise_mul_backward(std::span<const Tensor<T>* const> factors, const Tensor<T>& upstream) {
  std::vector<Tensor<T>> grads;
  grads.reserve(factors.size());
  for (std::size_t f = 0; f < factors.size(); ++f) {
    require_same_shape(factors[f]->shape(), upstream.shape(), "elementwise_mul_backward");
    Tensor<T> g = upstream;
    for (std::size_t j = 0; j < factors.size(); ++j) {
      if (j == f) continue;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= (*factors[j])[i];
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace fsf
