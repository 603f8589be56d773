#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fsf/fft.hpp"
#include "fsf/ops.hpp"
#include "oracles.hpp"

using fsf::Tensor;
using oracle::cd;

namespace {

Tensor<double> random_tensor(fsf::Shape s, std::uint64_t seed) {
  const auto n = fsf::shape_size(s);
  return Tensor<double>(std::move(s), oracle::random_vector(n, seed));
}

std::vector<cd> to_complex(const fsf::ComplexPlane& p) {
  std::vector<cd> out(p.re.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cd(p.re[i], p.im[i]);
  return out;
}

}  // namespace

TEST(Dft2, AllOnesTwoByTwo) {
  std::vector<double> ones(4, 1.0);
  auto f = fsf::dft2(std::span<const double>(ones), 2, 2);
  EXPECT_DOUBLE_EQ(f.re[0], 4.0);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(f.re[i], 0.0, 1e-15);
  for (auto v : f.im) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Dft2, ImpulseIsFlat) {
  std::vector<double> delta(64, 0.0);
  delta[0] = 1.0;
  auto f = fsf::dft2(std::span<const double>(delta), 8, 8);
  for (auto v : f.re) EXPECT_NEAR(v, 1.0, 1e-15);
  for (auto v : f.im) EXPECT_NEAR(v, 0.0, 1e-15);
}

TEST(Dft2, ZeroSizedInputRejected) {
  std::vector<double> empty;
  EXPECT_THROW(fsf::dft2(std::span<const double>(empty), 0, 4), fsf::DimensionError);
  EXPECT_THROW(fsf::dft2(std::span<const double>(empty), 3, 0), fsf::DimensionError);
}

TEST(Dft2, NonSquareMatchesNaive) {
  auto x = oracle::random_vector(7 * 12, 11);
  auto fast = to_complex(fsf::dft2(std::span<const double>(x), 7, 12));
  auto ref = oracle::naive_dft2(x, 7, 12);
  EXPECT_LE(oracle::rel_err_peak(fast, ref), 1e-9);
}

class DftSizes : public ::testing::TestWithParam<std::pair<int, int>> {};

TEST_P(DftSizes, MatchesNaiveAndParseval) {
  const auto [h, w] = GetParam();
  auto x = oracle::random_vector(std::size_t(h * w), 1000 + h * 31 + w);
  auto fast = to_complex(fsf::dft2(std::span<const double>(x), std::size_t(h), std::size_t(w)));
  auto ref = oracle::naive_dft2(x, h, w);
  EXPECT_LE(oracle::rel_err_peak(fast, ref), 1e-9);

  double spatial = 0, spectral = 0;
  for (auto v : x) spatial += v * v;
  for (auto z : fast) spectral += std::norm(z);
  spectral /= double(h * w);
  EXPECT_LE(std::abs(spectral - spatial) / spatial, 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Sizes, DftSizes,
                         ::testing::Values(std::pair{5, 5}, std::pair{7, 7}, std::pair{8, 8}, std::pair{12, 12},
                                           std::pair{5, 224}, std::pair{13, 17}, std::pair{1, 9}, std::pair{97, 3},
                                           std::pair{224, 7}));

TEST(Dft2, BluesteinPathIsUsedForLargePrimes) {
  EXPECT_TRUE(fsf::FftPlan(97).uses_bluestein());
  EXPECT_FALSE(fsf::FftPlan(224).uses_bluestein());
  EXPECT_FALSE(fsf::FftPlan(13).uses_bluestein());
}

TEST(Dft2, InverseRoundTrip) {
  auto x = oracle::random_vector(10 * 14, 5);
  auto z = fsf::dft2_complex(std::span<const double>(x), 10, 14);
  auto back = fsf::idft2_real(z, 10, 14);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], x[i], 1e-12);
}

TEST(Dft2Magnitude, KnownValues) {
  Tensor<double> ones(1, 2, 2, 1.0);
  auto m = fsf::dft2_magnitude(ones);
  EXPECT_DOUBLE_EQ(m[0], 4.0);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(m[i], 0.0, 1e-15);
  auto zero = fsf::dft2_magnitude(Tensor<double>(1, 6, 6));
  for (auto v : zero.vec()) EXPECT_EQ(v, 0.0);
}

TEST(Dft2Magnitude, Large224MatchesNaive) {
  auto x = oracle::random_vector(224 * 224, 21);
  auto mag = fsf::dft2_magnitude(std::span<const double>(x), 224, 224);
  // Spot-check a row band against the naive sum to keep runtime bounded.
  const int h = 224, w = 224;
  double peak = 0, worst = 0;
  for (auto m : mag) peak = std::max(peak, m);
  for (int u : {0, 1, 7, 111, 112, 223})
    for (int v = 0; v < w; v += 5) {
      long double re = 0, im = 0;
      for (int xx = 0; xx < h; ++xx)
        for (int y = 0; y < w; ++y) {
          const long long num = (static_cast<long long>(u) * xx % h) * w + (static_cast<long long>(v) * y % w) * h;
          const long double a = -2.0L * std::numbers::pi_v<long double> * num / (h * w);
          re += x[xx * w + y] * std::cos(a);
          im += x[xx * w + y] * std::sin(a);
        }
      const double ref = std::sqrt(double(re * re + im * im));
      worst = std::max(worst, std::abs(mag[u * w + v] - ref));
    }
  EXPECT_LE(worst / peak, 1e-9);
}

TEST(Dft2MagnitudeBackward, DeltaInputMatchesFiniteDifference) {
  std::vector<double> x(36, 0.0);
  x[0] = 1.0;
  std::vector<double> up(36, 1.0);
  auto f = [&](const std::vector<double>& v) {
    auto m = fsf::dft2_magnitude(std::span<const double>(v), 6, 6);
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s += up[i] * m[i];
    return s;
  };
  auto g = fsf::dft2_magnitude_backward<double>(x, up, 6, 6);
  EXPECT_LE(oracle::rel_err(g, oracle::fd_gradient(f, x)), 1e-4);
}

TEST(Dft2MagnitudeBackward, RandomMatchesFiniteDifference) {
  auto x = oracle::random_vector(36, 3);
  auto up = oracle::random_vector(36, 4);
  auto f = [&](const std::vector<double>& v) {
    auto m = fsf::dft2_magnitude(std::span<const double>(v), 6, 6);
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s += up[i] * m[i];
    return s;
  };
  auto g = fsf::dft2_magnitude_backward<double>(x, up, 6, 6);
  EXPECT_LE(oracle::rel_err(g, oracle::fd_gradient(f, x)), 1e-4);
}

TEST(Dft2MagnitudeBackward, ZeroInputGivesZeroGradient) {
  std::vector<double> x(25, 0.0), up(25, 1.0);
  auto g = fsf::dft2_magnitude_backward<double>(x, up, 5, 5);
  for (auto v : g) EXPECT_EQ(v, 0.0);
}

TEST(Conv2d, IdentityKernel) {
  auto x = random_tensor({2, 5, 6}, 1);
  Tensor<double> k(fsf::Shape{2, 2, 3, 3});
  k[((0 * 2 + 0) * 3 + 1) * 3 + 1] = 1.0;
  k[((1 * 2 + 1) * 3 + 1) * 3 + 1] = 1.0;
  std::vector<double> b(2, 0.0);
  auto y = fsf::conv2d(x, k, b);
  EXPECT_EQ(y, x);
}

TEST(Conv2d, ZeroKernelGivesBias) {
  auto x = random_tensor({3, 4, 4}, 2);
  Tensor<double> k(fsf::Shape{2, 3, 3, 3});
  std::vector<double> b{0.5, -1.25};
  auto y = fsf::conv2d(x, k, b);
  for (std::size_t i = 0; i < 16; ++i) {
    EXPECT_EQ(y[i], 0.5);
    EXPECT_EQ(y[16 + i], -1.25);
  }
}

TEST(Conv2d, MatchesNaiveOracle) {
  auto x = random_tensor({2, 5, 5}, 3);
  auto k = random_tensor({3, 2, 3, 3}, 4);
  auto b = oracle::random_vector(3, 5);
  auto y = fsf::conv2d(x, k, b);
  auto ref = oracle::naive_conv3x3(x.vec(), 2, 5, 5, k.vec(), b, 3);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, ChannelMismatchRejected) {
  auto x = random_tensor({2, 5, 5}, 3);
  Tensor<double> k(fsf::Shape{3, 4, 3, 3});
  std::vector<double> b(3);
  EXPECT_THROW(fsf::conv2d(x, k, b), fsf::DimensionError);
}

TEST(Conv2dBackward, ZeroUpstream) {
  auto x = random_tensor({2, 4, 4}, 6);
  auto k = random_tensor({3, 2, 3, 3}, 7);
  auto g = fsf::conv2d_backward(x, k, Tensor<double>(3, 4, 4));
  for (auto v : g.input.vec()) EXPECT_EQ(v, 0.0);
  for (auto v : g.kernels.vec()) EXPECT_EQ(v, 0.0);
  for (auto v : g.bias) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  auto x = random_tensor({2, 5, 4}, 8);
  auto k = random_tensor({3, 2, 3, 3}, 9);
  auto b = oracle::random_vector(3, 10);
  auto up = random_tensor({3, 5, 4}, 11);
  auto loss = [&](const Tensor<double>& xi, const Tensor<double>& ki, const std::vector<double>& bi) {
    auto y = fsf::conv2d(xi, ki, bi);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
    return s;
  };
  auto g = fsf::conv2d_backward(x, k, up);
  auto gx = oracle::fd_gradient([&](const std::vector<double>& v) { return loss(Tensor<double>(x.shape(), v), k, b); },
                                x.vec());
  auto gk = oracle::fd_gradient([&](const std::vector<double>& v) { return loss(x, Tensor<double>(k.shape(), v), b); },
                                k.vec());
  auto gb = oracle::fd_gradient([&](const std::vector<double>& v) { return loss(x, k, v); }, b);
  EXPECT_LE(oracle::rel_err(g.input.vec(), gx), 1e-4);
  EXPECT_LE(oracle::rel_err(g.kernels.vec(), gk), 1e-4);
  EXPECT_LE(oracle::rel_err(g.bias, gb), 1e-4);
}

TEST(Conv2dBackward, BiasGradIsUpstreamSum) {
  auto x = random_tensor({1, 3, 3}, 12);
  auto k = random_tensor({2, 1, 3, 3}, 13);
  auto up = random_tensor({2, 3, 3}, 14);
  auto g = fsf::conv2d_backward(x, k, up);
  for (std::size_t o = 0; o < 2; ++o) {
    double s = 0;
    for (auto v : up.channel(o)) s += v;
    EXPECT_NEAR(g.bias[o], s, 1e-14);
  }
}

TEST(TransposedConv2d, DeltaStampsKernel) {
  Tensor<double> x(1, 3, 3);
  x(0, 1, 1) = 1.0;
  auto k = random_tensor({1, 1, 4, 4}, 15);
  auto y = fsf::transposed_conv2d(x, k);
  ASSERT_EQ(y.shape(), (fsf::Shape{1, 6, 6}));
  // Input (1,1) lands at output 2*1 + ky - 1 for ky in [0,4).
  for (int ky = 0; ky < 4; ++ky)
    for (int kx = 0; kx < 4; ++kx) EXPECT_EQ(y(0, std::size_t(1 + ky), std::size_t(1 + kx)), k[std::size_t(ky * 4 + kx)]);
}

TEST(TransposedConv2d, MatchesScatterDefinition) {
  auto x = random_tensor({2, 4, 5}, 16);
  auto k = random_tensor({2, 3, 4, 4}, 17);
  auto y = fsf::transposed_conv2d(x, k);
  auto ref = oracle::scatter_tconv(x.vec(), 2, 4, 5, k.vec(), 3);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(TransposedConv2d, UniformKernelOnConstantInput) {
  Tensor<double> x(1, 4, 4, 1.0);
  Tensor<double> k(fsf::Shape{1, 1, 4, 4}, 0.25);
  auto y = fsf::transposed_conv2d(x, k);
  auto ref = oracle::scatter_tconv(x.vec(), 1, 4, 4, k.vec(), 1);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-15);
  // Interior outputs receive exactly four taps.
  for (std::size_t yy = 1; yy < 7; ++yy)
    for (std::size_t xx = 1; xx < 7; ++xx) EXPECT_DOUBLE_EQ(y(0, yy, xx), 1.0);
}

TEST(TransposedConv2d, EqualsZeroInsertionThenFlippedConvBitExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto x = random_tensor({3, 5, 6}, 100 + seed);
    auto k = random_tensor({3, 2, 4, 4}, 200 + seed);
    auto y = fsf::transposed_conv2d(x, k);
    auto ref = oracle::zero_insert_then_conv(x.vec(), 3, 5, 6, k.vec(), 2);
    EXPECT_EQ(y.vec(), ref);
  }
}

TEST(MedianFilter, ConstantUnchangedAndUnitWindowIdentity) {
  Tensor<double> c(1, 6, 7, 0.3);
  EXPECT_EQ(fsf::median_filter(c, 5), c);
  auto x = random_tensor({2, 5, 5}, 18);
  EXPECT_EQ(fsf::median_filter(x, 1), x);
}

TEST(MedianFilter, EvenWindowRejected) {
  EXPECT_THROW(fsf::median_filter(Tensor<double>(1, 4, 4), 4), fsf::ParameterError);
}

TEST(MedianFilter, MatchesSortOracleBitExact) {
  for (int k : {1, 3, 5, 7}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      auto x = random_tensor({1, 9, 11}, 300 + seed);
      auto y = fsf::median_filter(x, std::size_t(k));
      EXPECT_EQ(y.vec(), oracle::sort_median(x.vec(), 9, 11, k)) << "k=" << k;
    }
  }
  // Window wider than the image exercises repeated reflection.
  auto small = random_tensor({1, 3, 4}, 9);
  EXPECT_EQ(fsf::median_filter(small, 7).vec(), oracle::sort_median(small.vec(), 3, 4, 7));
}

TEST(LeakyRelu, Definition) {
  Tensor<double> x(fsf::Shape{3}, std::vector<double>{1.0, -2.0, 0.0});
  auto y = fsf::leaky_relu(x, 0.2);
  EXPECT_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], -0.4);
  EXPECT_EQ(y[2], 0.0);
}

TEST(LeakyRelu, BackwardMatchesFiniteDifference) {
  auto x = random_tensor({1, 4, 5}, 19);
  auto up = random_tensor({1, 4, 5}, 20);
  auto f = [&](const std::vector<double>& v) {
    auto y = fsf::leaky_relu(Tensor<double>(x.shape(), v));
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
    return s;
  };
  auto g = fsf::leaky_relu_backward(x, up);
  auto fd = oracle::fd_gradient(f, x.vec());
  for (std::size_t i = 0; i < fd.size(); ++i) {
    if (std::abs(x[i]) < 1e-5) continue;
    EXPECT_NEAR(g[i], fd[i], 1e-6);
  }
}

TEST(InstanceNorm, StandardizesEachChannel) {
  auto x = random_tensor({3, 6, 5}, 21);
  for (auto& v : x.vec()) v = 4.0 * v + 2.0;
  std::vector<double> gain(3, 1.0), bias(3, 0.0);
  auto y = fsf::instance_norm(x, gain, bias);
  for (std::size_t c = 0; c < 3; ++c) {
    double m = 0, v = 0;
    for (auto e : y.channel(c)) m += e;
    m /= 30;
    for (auto e : y.channel(c)) v += (e - m) * (e - m);
    v /= 30;
    EXPECT_LE(std::abs(m), 1e-6);
    EXPECT_LE(std::abs(v - 1.0), 1e-4);
  }
}

TEST(InstanceNorm, ConstantChannelGoesToZero) {
  Tensor<double> x(1, 4, 4, 3.5);
  std::vector<double> gain{1.0}, bias{0.0};
  auto y = fsf::instance_norm(x, gain, bias);
  for (auto v : y.vec()) EXPECT_EQ(v, 0.0);
}

TEST(InstanceNorm, DegenerateSpatialMapRejected) {
  std::vector<double> gain{1.0}, bias{0.0};
  EXPECT_THROW(fsf::instance_norm(Tensor<double>(1, 1, 1), gain, bias), fsf::ParameterError);
}

TEST(InstanceNorm, BackwardMatchesFiniteDifferences) {
  auto x = random_tensor({2, 4, 3}, 22);
  auto gain = oracle::random_vector(2, 23, 0.5, 1.5);
  auto bias = oracle::random_vector(2, 24);
  auto up = random_tensor({2, 4, 3}, 25);
  auto loss = [&](const Tensor<double>& xi, const std::vector<double>& gi, const std::vector<double>& bi) {
    auto y = fsf::instance_norm(xi, gi, bi);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * up[i];
    return s;
  };
  fsf::NormCache<double> cache;
  fsf::instance_norm(x, gain, bias, fsf::kNormEps, &cache);
  auto g = fsf::instance_norm_backward(cache, gain, up);
  auto gx = oracle::fd_gradient([&](const std::vector<double>& v) { return loss(Tensor<double>(x.shape(), v), gain, bias); },
                                x.vec());
  auto gg = oracle::fd_gradient([&](const std::vector<double>& v) { return loss(x, v, bias); }, gain);
  auto gb = oracle::fd_gradient([&](const std::vector<double>& v) { return loss(x, gain, v); }, bias);
  EXPECT_LE(oracle::rel_err(g.input.vec(), gx), 1e-4);
  EXPECT_LE(oracle::rel_err(g.gain, gg), 1e-4);
  EXPECT_LE(oracle::rel_err(g.bias, gb), 1e-4);
}

TEST(ElementwiseMul, IdentitiesAndShapeCheck) {
  auto a = random_tensor({2, 3, 3}, 26);
  Tensor<double> ones(a.shape(), 1.0), zeros(a.shape(), 0.0);
  EXPECT_EQ(fsf::elementwise_mul(a, ones), a);
  const auto annihilated = fsf::elementwise_mul(a, zeros);
  for (auto v : annihilated.vec()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(fsf::elementwise_mul(a, Tensor<double>(1, 3, 3)), fsf::DimensionError);
}

TEST(ElementwiseMul, FourWayGradientMatchesFiniteDifferences) {
  std::vector<Tensor<double>> f;
  for (std::uint64_t s = 0; s < 4; ++s) f.push_back(random_tensor({1, 3, 4}, 30 + s));
  auto up = random_tensor({1, 3, 4}, 40);
  const Tensor<double>* ptrs[] = {&f[0], &f[1], &f[2], &f[3]};
  auto grads = fsf::elementwise_mul_backward<double>(ptrs, up);
  for (std::size_t which = 0; which < 4; ++which) {
    auto fn = [&](const std::vector<double>& v) {
      auto copy = f;
      copy[which] = Tensor<double>(up.shape(), v);
      auto p = fsf::elementwise_mul(copy[0], copy[1], copy[2], copy[3]);
      double s = 0;
      for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * up[i];
      return s;
    };
    EXPECT_LE(oracle::rel_err(grads[which].vec(), oracle::fd_gradient(fn, f[which].vec())), 1e-4);
  }
}
