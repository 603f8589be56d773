#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "fsf/ops.hpp"
#include "fsf/rng.hpp"
#include "fsf/tensor.hpp"

namespace fsf::nn {

template <typename T>
struct Conv {
  Tensor<T> w;  // O x C x 3 x 3
  Tensor<T> b;  // O
};

template <typename T>
struct Norm {
  Tensor<T> gain;
  Tensor<T> bias;
};

template <typename T>
struct Dense {
  Tensor<T> w;  // out x in
  Tensor<T> b;  // out
};

template <typename T>
Conv<T> make_conv(std::size_t out, std::size_t in) {
  return {Tensor<T>(Shape{out, in, 3, 3}), Tensor<T>(Shape{out})};
}

template <typename T>
Norm<T> make_norm(std::size_t c) {
  return {Tensor<T>(Shape{c}, T(1)), Tensor<T>(Shape{c}, T(0))};
}

template <typename T>
Dense<T> make_dense(std::size_t out, std::size_t in) {
  return {Tensor<T>(Shape{out, in}), Tensor<T>(Shape{out})};
}

// Uniform(-bound, bound) with bound = sqrt(3 * gain^2 / fan_in).
template <typename T>
void init_fan_in(Tensor<T>& w, std::size_t fan_in, double gain, Rng& rng) {
  const double bound = std::sqrt(3.0 * gain * gain / double(fan_in));
  for (auto& v : w.vec()) v = T(rng.uniform(-bound, bound));
}

// Gain for a layer followed by a leaky ReLU.
inline double leaky_gain(double slope) { return std::sqrt(2.0 / (1.0 + slope * slope)); }

// Forward state kept for the backward pass of a conv layer.
template <typename T>
struct ConvTrace {
  RowMat<T> col;
  Shape in_shape;
};

template <typename T>
Tensor<T> conv_forward(const Conv<T>& p, const Tensor<T>& x, ConvTrace<T>* trace) {
  check_conv_shapes(x.shape(), p.w.shape(), p.b.size());
  auto col = im2col3x3(x);
  auto y = conv2d_from_col(col, p.w, p.b.span(), x.height(), x.width());
  if (trace) *trace = {std::move(col), x.shape()};
  return y;
}

// Accumulates parameter gradients into `g`; returns the input gradient.
template <typename T>
Tensor<T> conv_backward(const Conv<T>& p, const ConvTrace<T>& trace, const Tensor<T>& upstream, Conv<T>& g,
                        bool need_input = true) {
  auto grads = conv2d_backward_from_col(trace.col, trace.in_shape, p.w, upstream, need_input);
  for (std::size_t i = 0; i < g.w.size(); ++i) g.w[i] += grads.kernels[i];
  for (std::size_t i = 0; i < g.b.size(); ++i) g.b[i] += grads.bias[i];
  return std::move(grads.input);
}

template <typename T>
Tensor<T> norm_backward(const Norm<T>& p, const NormCache<T>& cache, const Tensor<T>& upstream, Norm<T>& g) {
  auto grads = instance_norm_backward(cache, p.gain.span(), upstream);
  for (std::size_t i = 0; i < g.gain.size(); ++i) {
    g.gain[i] += grads.gain[i];
    g.bias[i] += grads.bias[i];
  }
  return std::move(grads.input);
}

template <typename T>
std::vector<T> dense_forward(const Dense<T>& p, const std::vector<T>& x) {
  const std::size_t out = p.w.dim(0), in = p.w.dim(1);
  if (x.size() != in) throw DimensionError("dense layer expects " + std::to_string(in) + " inputs");
  std::vector<T> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    T acc = p.b[o];
    for (std::size_t i = 0; i < in; ++i) acc += p.w[o * in + i] * x[i];
    y[o] = acc;
  }
  return y;
}

template <typename T>
std::vector<T> dense_backward(const Dense<T>& p, const std::vector<T>& x, const std::vector<T>& upstream, Dense<T>& g) {
  const std::size_t out = p.w.dim(0), in = p.w.dim(1);
  std::vector<T> dx(in, T(0));
  for (std::size_t o = 0; o < out; ++o) {
    g.b[o] += upstream[o];
    for (std::size_t i = 0; i < in; ++i) {
      g.w[o * in + i] += upstream[o] * x[i];
      dx[i] += p.w[o * in + i] * upstream[o];
    }
  }
  return dx;
}

template <typename T>
std::vector<T> leaky_vec(std::vector<T> x, double slope) {
  for (auto& v : x) v = v >= T(0) ? v : T(slope) * v;
  return x;
}

template <typename T>
std::vector<T> leaky_vec_backward(const std::vector<T>& pre, std::vector<T> upstream, double slope) {
  for (std::size_t i = 0; i < pre.size(); ++i)
    if (pre[i] < T(0)) upstream[i] *= T(slope);
  return upstream;
}

// Spatial mean per channel.
template <typename T>
std::vector<T> global_average_pool(const Tensor<T>& x) {
  std::vector<T> out(x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    double s = 0;
    for (auto v : x.channel(c)) s += double(v);
    out[c] = T(s / double(x.plane_size()));
  }
  return out;
}

template <typename T>
Tensor<T> global_average_pool_backward(const Shape& shape, std::span<const T> upstream) {
  Tensor<T> g(shape);
  const T inv = T(1.0 / double(g.plane_size()));
  for (std::size_t c = 0; c < g.channels(); ++c)
    for (auto& v : g.channel(c)) v = upstream[c] * inv;
  return g;
}

}  // namespace fsf::nn
