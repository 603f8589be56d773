#pragma once

// Fractal spectrum classifier: a spatial high-pass block, a learned view of
// the log-magnitude spectrum, N fractal units that compare the four spectral
// quadrants at successively coarser scales, and a small MLP head.

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fsf/error.hpp"
#include "fsf/nn/layers.hpp"
#include "fsf/ops.hpp"
#include "fsf/rng.hpp"
#include "fsf/tensor.hpp"

namespace fsf::nn {

struct ModelConfig {
  std::size_t in_channels = 1;
  std::size_t channels = 32;
  std::size_t units = 2;  // N
  std::size_t input_size = 64;
  std::size_t hidden = 64;
  double slope = kLeakySlope;

  std::size_t feature_length() const { return channels * (units + 1); }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void validate_model_config(const ModelConfig& c) {
  if (c.in_channels == 0 || c.channels == 0 || c.hidden == 0) throw ConfigError("model widths must be positive");
  if (c.units > 8) throw ConfigError("at most 8 fractal units are supported");
  if (c.input_size < 4) throw ConfigError("input size must be at least 4");
  if (c.input_size % (std::size_t(1) << c.units) != 0)
    throw ConfigError("input size " + std::to_string(c.input_size) + " is not divisible by 2^" + std::to_string(c.units));
  if (c.input_size >> c.units < 1) throw ConfigError("input too small for the number of fractal units");
  if (!(c.slope >= 0 && c.slope < 1)) throw ConfigError("leaky slope must lie in [0, 1)");
}

template <typename T>
struct FractalUnitParams {
  std::array<Conv<T>, 4> branch;
  Conv<T> fuse;
};

template <typename T>
struct ModelParams {
  std::array<Conv<T>, 2> spatial;
  std::array<Norm<T>, 2> spatial_norm;
  std::array<Conv<T>, 2> spectral;
  std::array<Norm<T>, 2> spectral_norm;
  std::vector<FractalUnitParams<T>> units;
  Conv<T> readout;
  Dense<T> hidden;
  Dense<T> out;

  static ModelParams zeros(const ModelConfig& c) {
    ModelParams p;
    p.spatial = {make_conv<T>(c.channels, c.in_channels), make_conv<T>(c.channels, c.channels)};
    p.spatial_norm = {make_norm<T>(c.channels), make_norm<T>(c.channels)};
    p.spectral = {make_conv<T>(c.channels, c.channels), make_conv<T>(c.channels, c.channels)};
    p.spectral_norm = {make_norm<T>(c.channels), make_norm<T>(c.channels)};
    p.units.resize(c.units);
    for (auto& u : p.units) {
      for (auto& b : u.branch) b = make_conv<T>(c.channels, c.channels);
      u.fuse = make_conv<T>(c.channels, c.channels);
    }
    p.readout = make_conv<T>(c.channels, c.channels);
    p.hidden = make_dense<T>(c.hidden, c.feature_length());
    p.out = make_dense<T>(1, c.hidden);
    p.set_zero();
    return p;
  }

  // Every tensor with a stable name, in a fixed order.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    const auto conv = [&](const std::string& n, auto& c) {
      fn(n + ".weight", c.w);
      fn(n + ".bias", c.b);
    };
    const auto norm = [&](const std::string& n, auto& c) {
      fn(n + ".gain", c.gain);
      fn(n + ".bias", c.bias);
    };
    for (std::size_t i = 0; i < 2; ++i) {
      conv("spatial" + std::to_string(i), self.spatial[i]);
      norm("spatial_norm" + std::to_string(i), self.spatial_norm[i]);
    }
    for (std::size_t i = 0; i < 2; ++i) {
      conv("spectral" + std::to_string(i), self.spectral[i]);
      norm("spectral_norm" + std::to_string(i), self.spectral_norm[i]);
    }
    for (std::size_t n = 0; n < self.units.size(); ++n) {
      const std::string u = "unit" + std::to_string(n);
      for (std::size_t b = 0; b < 4; ++b) conv(u + ".branch" + std::to_string(b), self.units[n].branch[b]);
      conv(u + ".fuse", self.units[n].fuse);
    }
    conv("readout", self.readout);
    fn(std::string("hidden.weight"), self.hidden.w);
    fn(std::string("hidden.bias"), self.hidden.b);
    fn(std::string("out.weight"), self.out.w);
    fn(std::string("out.bias"), self.out.b);
  }

  std::vector<std::pair<std::string, Tensor<T>*>> named() {
    std::vector<std::pair<std::string, Tensor<T>*>> v;
    visit(*this, [&](const std::string& n, Tensor<T>& t) { v.emplace_back(n, &t); });
    return v;
  }
  std::vector<std::pair<std::string, const Tensor<T>*>> named() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> v;
    visit(*this, [&](const std::string& n, const Tensor<T>& t) { v.emplace_back(n, &t); });
    return v;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->size();
    return n;
  }

  void set_zero() {
    for (auto& [name, t] : named()) t->fill(T(0));
  }

  // this += other, tensor by tensor.
  void accumulate(const ModelParams& other) {
    auto dst = named();
    auto src = other.named();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto& d = dst[i].second->vec();
      const auto& s = src[i].second->vec();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
    }
  }
};

template <typename T>
ModelParams<T> init_params(const ModelConfig& c, std::uint64_t seed) {
  validate_model_config(c);
  auto p = ModelParams<T>::zeros(c);
  for (auto& n : p.spatial_norm) n.gain.fill(T(1));
  for (auto& n : p.spectral_norm) n.gain.fill(T(1));
  Rng rng(seed);
  const double g = leaky_gain(c.slope);
  init_fan_in(p.spatial[0].w, c.in_channels * 9, g, rng);
  init_fan_in(p.spatial[1].w, c.channels * 9, g, rng);
  init_fan_in(p.spectral[0].w, c.channels * 9, g, rng);
  init_fan_in(p.spectral[1].w, c.channels * 9, g, rng);
  for (auto& u : p.units) {
    // unit gain keeps the four-way product near unit scale
    for (auto& b : u.branch) init_fan_in(b.w, c.channels * 9, 1.0, rng);
    init_fan_in(u.fuse.w, c.channels * 9, g, rng);
  }
  init_fan_in(p.readout.w, c.channels * 9, g, rng);
  init_fan_in(p.hidden.w, c.feature_length(), g, rng);
  init_fan_in(p.out.w, c.hidden, 1.0, rng);
  return p;
}

// ---------------------------------------------------------------------------
// Quadrant split / merge on C x H x W tensors. Order: 00, 01, 10, 11.

template <typename T>
std::array<Tensor<T>, 4> split_quadrants(const Tensor<T>& x) {
  const std::size_t c_n = x.channels(), h = x.height() / 2, w = x.width() / 2;
  if (x.height() % 2 || x.width() % 2) throw DimensionError("split_quadrants needs even extents");
  std::array<Tensor<T>, 4> q;
  for (std::size_t k = 0; k < 4; ++k) {
    q[k] = Tensor<T>(c_n, h, w);
    const std::size_t oy = (k / 2) * h, ox = (k % 2) * w;
    for (std::size_t c = 0; c < c_n; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) q[k](c, y, xx) = x(c, oy + y, ox + xx);
  }
  return q;
}

template <typename T>
void merge_quadrants_add(const std::array<Tensor<T>, 4>& q, Tensor<T>& x) {
  const std::size_t h = q[0].height(), w = q[0].width();
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t oy = (k / 2) * h, ox = (k % 2) * w;
    for (std::size_t c = 0; c < q[k].channels(); ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) x(c, oy + y, ox + xx) += q[k](c, y, xx);
  }
}

// ---------------------------------------------------------------------------

template <typename T>
struct UnitTrace {
  std::array<Tensor<T>, 4> branch_in;
  std::array<ConvTrace<T>, 4> branch_conv;
  std::array<Tensor<T>, 4> branch_out;
  ConvTrace<T> fuse_conv;
  Tensor<T> fuse_pre;
};

template <typename T>
struct Trace {
  std::array<ConvTrace<T>, 2> spatial_conv;
  std::array<Tensor<T>, 2> spatial_pre;
  std::array<NormCache<T>, 2> spatial_norm;
  Tensor<T> highpass;  // input to the DFT
  Tensor<T> magnitude;
  NormCache<T> log_norm;
  std::array<ConvTrace<T>, 2> spectral_conv;
  std::array<Tensor<T>, 2> spectral_pre;
  std::array<NormCache<T>, 2> spectral_norm;
  std::vector<Tensor<T>> levels;  // H^(0) .. H^(N)
  std::vector<UnitTrace<T>> units;
  ConvTrace<T> readout_conv;
  Tensor<T> readout_pre;
  std::vector<T> features;  // S^(0) .. S^(N), concatenated
  std::vector<T> hidden_pre;
  std::vector<T> hidden_act;
  T logit = T(0);
};

template <typename T>
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, ModelParams<T> params) : config_(config), params_(std::move(params)) {
    validate_model_config(config_);
  }
  Model(const ModelConfig& config, std::uint64_t seed) : Model(config, init_params<T>(config, seed)) {}

  const ModelConfig& config() const { return config_; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }

  void check_input(const Tensor<T>& x) const {
    const Shape want{config_.in_channels, config_.input_size, config_.input_size};
    if (x.shape() != want)
      throw DimensionError("model input " + shape_str(x.shape()) + " does not match expected " + shape_str(want));
  }

  T forward(const Tensor<T>& x, Trace<T>* trace = nullptr) const {
    Trace<T> local;
    Trace<T>& tr = trace ? *trace : local;
    run(x, tr);
    return tr.logit;
  }

  // Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logit).
  // Returns d(loss)/d(input) when requested.
  Tensor<T> backward(const Trace<T>& tr, T dlogit, ModelParams<T>& grads, bool need_input = false) const;

 private:
  void run(const Tensor<T>& x, Trace<T>& tr) const;

  ModelConfig config_;
  ModelParams<T> params_;
};

template <typename T>
void Model<T>::run(const Tensor<T>& x, Trace<T>& tr) const {
  check_input(x);
  const auto& p = params_;
  const double s = config_.slope;
  const std::size_t n_units = config_.units;

  Tensor<T> h = x;
  for (std::size_t i = 0; i < 2; ++i) {
    tr.spatial_pre[i] = conv_forward(p.spatial[i], h, &tr.spatial_conv[i]);
    h = instance_norm(leaky_relu(tr.spatial_pre[i], s), p.spatial_norm[i].gain.span(), p.spatial_norm[i].bias.span(),
                      kNormEps, &tr.spatial_norm[i]);
  }
  tr.highpass = h;
  tr.magnitude = dft2_magnitude(h);
  Tensor<T> logm = tr.magnitude;
  for (auto& v : logm.vec()) v = std::log1p(v);
  {
    const std::vector<T> one(config_.channels, T(1)), zero(config_.channels, T(0));
    h = instance_norm<T>(logm, one, zero, kNormEps, &tr.log_norm);
  }
  for (std::size_t i = 0; i < 2; ++i) {
    tr.spectral_pre[i] = conv_forward(p.spectral[i], h, &tr.spectral_conv[i]);
    h = instance_norm(leaky_relu(tr.spectral_pre[i], s), p.spectral_norm[i].gain.span(),
                      p.spectral_norm[i].bias.span(), kNormEps, &tr.spectral_norm[i]);
  }

  tr.levels.assign(1, std::move(h));
  tr.units.assign(n_units, {});
  tr.features.clear();
  tr.features.reserve(config_.feature_length());
  for (std::size_t n = 0; n < n_units; ++n) {
    auto& ut = tr.units[n];
    const auto& up = p.units[n];
    ut.branch_in = split_quadrants(tr.levels[n]);
    for (std::size_t b = 0; b < 4; ++b) ut.branch_out[b] = conv_forward(up.branch[b], ut.branch_in[b], &ut.branch_conv[b]);
    const auto prod = elementwise_mul(ut.branch_out[0], ut.branch_out[1], ut.branch_out[2], ut.branch_out[3]);
    ut.fuse_pre = conv_forward(up.fuse, prod, &ut.fuse_conv);
    const auto pooled = global_average_pool(leaky_relu(ut.fuse_pre, s));
    tr.features.insert(tr.features.end(), pooled.begin(), pooled.end());

    Tensor<T> next(ut.branch_in[0].shape());
    for (std::size_t i = 0; i < next.size(); ++i)
      next[i] = T(0.25) * (ut.branch_in[0][i] + ut.branch_in[1][i] + ut.branch_in[2][i] + ut.branch_in[3][i]);
    tr.levels.push_back(std::move(next));
  }
  tr.readout_pre = conv_forward(p.readout, tr.levels.back(), &tr.readout_conv);
  const auto pooled = global_average_pool(leaky_relu(tr.readout_pre, s));
  tr.features.insert(tr.features.end(), pooled.begin(), pooled.end());

  tr.hidden_pre = dense_forward(p.hidden, tr.features);
  tr.hidden_act = leaky_vec(tr.hidden_pre, s);
  tr.logit = dense_forward(p.out, tr.hidden_act)[0];
}

template <typename T>
Tensor<T> Model<T>::backward(const Trace<T>& tr, T dlogit, ModelParams<T>& g, bool need_input) const {
  const auto& p = params_;
  const double s = config_.slope;
  const std::size_t C = config_.channels, n_units = config_.units;

  auto d_hidden = dense_backward(p.out, tr.hidden_act, std::vector<T>{dlogit}, g.out);
  d_hidden = leaky_vec_backward(tr.hidden_pre, std::move(d_hidden), s);
  const auto d_feat = dense_backward(p.hidden, tr.features, d_hidden, g.hidden);

  // Readout of H^(N).
  const std::span<const T> df(d_feat);
  auto d_r = global_average_pool_backward<T>(tr.readout_pre.shape(), df.subspan(n_units * C, C));
  d_r = leaky_relu_backward(tr.readout_pre, std::move(d_r), s);
  Tensor<T> d_level = conv_backward(p.readout, tr.readout_conv, d_r, g.readout);

  for (std::size_t n = n_units; n-- > 0;) {
    const auto& ut = tr.units[n];
    const auto& up = p.units[n];
    auto& gu = g.units[n];
    auto d_f = global_average_pool_backward<T>(ut.fuse_pre.shape(), df.subspan(n * C, C));
    d_f = leaky_relu_backward(ut.fuse_pre, std::move(d_f), s);
    const auto d_prod = conv_backward(up.fuse, ut.fuse_conv, d_f, gu.fuse);
    const Tensor<T>* factors[] = {&ut.branch_out[0], &ut.branch_out[1], &ut.branch_out[2], &ut.branch_out[3]};
    const auto d_out = elementwise_mul_backward<T>(std::span<const Tensor<T>* const>(factors), d_prod);

    std::array<Tensor<T>, 4> d_in;
    for (std::size_t b = 0; b < 4; ++b) {
      d_in[b] = conv_backward(up.branch[b], ut.branch_conv[b], d_out[b], gu.branch[b]);
      for (std::size_t i = 0; i < d_in[b].size(); ++i) d_in[b][i] += T(0.25) * d_level[i];
    }
    Tensor<T> d_prev(tr.levels[n].shape());
    merge_quadrants_add(d_in, d_prev);
    d_level = std::move(d_prev);
  }

  Tensor<T> d = std::move(d_level);
  for (std::size_t i = 2; i-- > 0;) {
    d = norm_backward(p.spectral_norm[i], tr.spectral_norm[i], d, g.spectral_norm[i]);
    d = leaky_relu_backward(tr.spectral_pre[i], std::move(d), s);
    d = conv_backward(p.spectral[i], tr.spectral_conv[i], d, g.spectral[i]);
  }
  {
    const std::vector<T> one(C, T(1));
    d = instance_norm_backward<T>(tr.log_norm, one, d).input;
  }
  for (std::size_t i = 0; i < d.size(); ++i) d[i] /= T(1) + tr.magnitude[i];
  d = dft2_magnitude_backward(tr.highpass, d);
  for (std::size_t i = 2; i-- > 0;) {
    d = norm_backward(p.spatial_norm[i], tr.spatial_norm[i], d, g.spatial_norm[i]);
    d = leaky_relu_backward(tr.spatial_pre[i], std::move(d), s);
    d = conv_backward(p.spatial[i], tr.spatial_conv[i], d, g.spatial[i], i > 0 || need_input);
  }
  return need_input ? d : Tensor<T>();
}

// Numerically stable binary cross-entropy on a logit; y in {0, 1}.
inline double bce_with_logit(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

inline double bce_with_logit_grad(double z, double y) { return 1.0 / (1.0 + std::exp(-z)) - y; }

}  // namespace fsf::nn
