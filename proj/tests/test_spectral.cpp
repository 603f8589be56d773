#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fsf/metrics.hpp"
#include "fsf/rng.hpp"
#include "fsf/simulate.hpp"
#include "fsf/spectral.hpp"
#include "oracles.hpp"

using fsf::Image;
using fsf::Spectrum;

namespace {

Image random_image(std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  return Image(fsf::Shape{c, h, w}, oracle::random_vector(c * h * w, seed, 0.0, 1.0));
}

Image white_noise(std::size_t h, std::size_t w, std::uint64_t seed) {
  fsf::Rng rng(seed);
  Image img(1, h, w);
  for (auto& v : img.vec()) v = rng.normal();
  return img;
}

double max_rel(const fsf::Tensor<double>& a, const fsf::Tensor<double>& b) {
  return fsf::max_rel_err(a.span(), b.span());
}

}  // namespace

TEST(SpectrumOf, ConstantImageOnlyDc) {
  Image img(1, 6, 8, 0.7);
  auto s = fsf::spectrum_of(img);
  EXPECT_NEAR(s.mag[0], 0.7 * 48, 1e-12);
  for (std::size_t i = 1; i < s.mag.size(); ++i) EXPECT_NEAR(s.mag[i], 0.0, 1e-12);
}

TEST(SpectrumOf, HorizontalCosineHasTwoBins) {
  const std::size_t h = 8, w = 16, k = 3;
  Image img(1, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img(0, y, x) = std::cos(2 * std::numbers::pi * double(k * x) / double(w));
  auto s = fsf::spectrum_of(img);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      const bool expected = u == 0 && (v == k || v == w - k);
      EXPECT_NEAR(s.mag(0, u, v), expected ? double(h * w) / 2 : 0.0, 1e-9) << u << "," << v;
    }
}

TEST(SpectrumOf, RandomMatchesNaive) {
  auto img = random_image(2, 6, 10, 1);
  auto s = fsf::spectrum_of(img);
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<double> plane(img.channel(c).begin(), img.channel(c).end());
    auto ref = oracle::naive_dft2(plane, 6, 10);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(s.mag.channel(c)[i], std::abs(ref[i]), 1e-10);
  }
}

TEST(QuadrantSplit, IndexDefinition) {
  fsf::Tensor<double> t(1, 4, 4);
  for (std::size_t i = 0; i < 16; ++i) t[i] = double(i);
  auto b = fsf::quadrant_split(Spectrum{t});
  EXPECT_EQ(b[0].mag.vec(), (std::vector<double>{0, 1, 4, 5}));
  EXPECT_EQ(b[1].mag.vec(), (std::vector<double>{2, 3, 6, 7}));
  EXPECT_EQ(b[2].mag.vec(), (std::vector<double>{8, 9, 12, 13}));
  EXPECT_EQ(b[3].mag.vec(), (std::vector<double>{10, 11, 14, 15}));
}

TEST(QuadrantSplit, OddExtentRejected) {
  EXPECT_THROW(fsf::quadrant_split(Spectrum{fsf::Tensor<double>(1, 5, 4)}), fsf::DimensionError);
  EXPECT_THROW(fsf::self_similarity(Spectrum{fsf::Tensor<double>(1, 4, 3)}), fsf::DimensionError);
}

TEST(QuadrantSplit, ZeroUpsampledTilesExactly) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto img = random_image(1, 7 + seed % 3, 6 + seed % 5, seed);
    auto base = fsf::spectrum_of(img);
    auto b = fsf::quadrant_split(fsf::spectrum_of(fsf::upsample_zero(img)));
    for (const auto& q : b) EXPECT_LE(max_rel(q.mag, base.mag), 1e-9);
  }
}

TEST(QuadrantSplit, WhiteNoiseBranchesUncorrelated) {
  double acc = 0;
  for (std::uint64_t t = 0; t < 100; ++t) acc += fsf::quadrant_correlation(fsf::spectrum_of(white_noise(32, 32, 500 + t)));
  EXPECT_LT(std::abs(acc / 100), 0.2);
}

TEST(NearestNeighbor, CosineKernelFactorization) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto img = random_image(1, 6, 9, 40 + seed);
    const std::size_t h = 6, w = 9;
    auto base = fsf::spectrum_of(img);
    auto up = fsf::spectrum_of(fsf::upsample_nearest(img));
    fsf::Tensor<double> expect(1, 2 * h, 2 * w);
    for (std::size_t u = 0; u < 2 * h; ++u)
      for (std::size_t v = 0; v < 2 * w; ++v)
        expect(0, u, v) = base.mag(0, u % h, v % w) * 4 * std::abs(std::cos(std::numbers::pi * u / (2.0 * h))) *
                          std::abs(std::cos(std::numbers::pi * v / (2.0 * w)));
    EXPECT_LE(max_rel(up.mag, expect), 1e-9);
  }
}

TEST(SelfSimilarity, KnownValues) {
  Spectrum ones{fsf::Tensor<double>(1, 4, 6, 1.0)};
  EXPECT_DOUBLE_EQ(fsf::self_similarity(ones, fsf::Measure::mean), 1.0);
  EXPECT_DOUBLE_EQ(fsf::self_similarity(ones, fsf::Measure::log_mean), std::log(2.0));

  auto s = fsf::spectrum_of(random_image(1, 8, 8, 3));
  for (std::size_t y = 4; y < 8; ++y)
    for (std::size_t x = 0; x < 4; ++x) s.mag(0, y, x) = 0.0;  // zero the 10 branch
  EXPECT_EQ(fsf::self_similarity(s, fsf::Measure::mean), 0.0);
}

TEST(SelfSimilarity, InvariantUnderBranchPermutation) {
  auto s = fsf::spectrum_of(random_image(1, 8, 10, 4));
  auto b = fsf::quadrant_split(s);
  const double ref = fsf::self_similarity(s);
  std::array<int, 4> perm{0, 1, 2, 3};
  while (std::next_permutation(perm.begin(), perm.end())) {
    fsf::Branches p{b[perm[0]], b[perm[1]], b[perm[2]], b[perm[3]]};
    EXPECT_NEAR(fsf::self_similarity(fsf::quadrant_merge(p)), ref, 1e-12);
  }
}

TEST(QuadrantAverage, KnownValues) {
  Spectrum x{fsf::Tensor<double>(fsf::Shape{1, 2, 2}, {1, 2, 3, 4})};
  Spectrum z{fsf::Tensor<double>(1, 2, 2)};
  EXPECT_EQ(fsf::quadrant_average(x, x, x, x).mag, x.mag);
  auto q = fsf::quadrant_average(z, z, z, x);
  EXPECT_EQ(q.mag.vec(), (std::vector<double>{0.25, 0.5, 0.75, 1.0}));
  EXPECT_THROW(fsf::quadrant_average(x, x, x, Spectrum{fsf::Tensor<double>(1, 2, 3)}), fsf::DimensionError);
}

TEST(QuadrantAverage, LeftInverseOfTiling) {
  auto s = fsf::spectrum_of(random_image(2, 5, 7, 5));
  auto avg = fsf::quadrant_average(fsf::quadrant_split(fsf::quadrant_merge({s, s, s, s})));
  EXPECT_EQ(avg.mag, s.mag);
}

TEST(FractalPyramid, LevelZeroIdentityAndExtents) {
  auto s = fsf::spectrum_of(random_image(1, 224, 224, 6));
  auto p0 = fsf::fractal_pyramid(s, 0);
  ASSERT_EQ(p0.levels.size(), 1u);
  EXPECT_EQ(p0.levels[0].mag, s.mag);

  auto p4 = fsf::fractal_pyramid(s, 4);
  std::vector<std::size_t> sizes;
  for (const auto& l : p4.levels) sizes.push_back(l.height());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{224, 112, 56, 28, 14}));
  for (const auto& l : p4.levels) EXPECT_EQ(l.height(), l.width());
}

TEST(FractalPyramid, DivisibilityRequired) {
  auto s = fsf::spectrum_of(random_image(1, 12, 12, 7));
  EXPECT_NO_THROW(fsf::fractal_pyramid(s, 2));
  EXPECT_THROW(fsf::fractal_pyramid(s, 3), fsf::ParameterError);
}

TEST(FractalPyramid, TwiceUpsampledLevelOneEqualsOriginalLevelZero) {
  auto img = random_image(1, 6, 6, 8);
  auto up2 = fsf::upsample_zero(fsf::upsample_zero(img));
  auto p = fsf::fractal_pyramid(fsf::spectrum_of(up2), 2);
  auto once = fsf::spectrum_of(fsf::upsample_zero(img));
  EXPECT_LE(max_rel(p.levels[1].mag, once.mag), 1e-9);
  EXPECT_LE(max_rel(p.levels[2].mag, fsf::spectrum_of(img).mag), 1e-9);
}

TEST(FractalPyramid, SelfSimilarityDropsBelowUpsamplingDepth) {
  const std::size_t k = 3;
  Image img = white_noise(8, 8, 9);
  for (std::size_t i = 0; i < k; ++i) img = fsf::upsample_zero(img);
  auto p = fsf::fractal_pyramid(fsf::spectrum_of(img), k + 0);
  for (std::size_t n = 0; n < k; ++n) EXPECT_GT(fsf::quadrant_correlation(p.levels[n]), 0.999) << "level " << n;
  EXPECT_LT(fsf::quadrant_correlation(p.levels[k]), 0.5);
}

TEST(SelfSimFeatures, ConcatenatedLength) {
  auto p = fsf::fractal_pyramid(fsf::spectrum_of(random_image(3, 16, 16, 10)), 2);
  auto f = fsf::self_similarity_features(p);
  ASSERT_EQ(f.per_level.size(), 3u);
  EXPECT_EQ(f.concatenated().size(), 9u);
}

TEST(AverageSpectrum, SingleAndPair) {
  std::vector<Image> one{random_image(1, 6, 6, 11)};
  EXPECT_EQ(fsf::average_spectrum(one).mag, fsf::spectrum_of(one[0]).mag);
  std::vector<Image> two{random_image(1, 6, 6, 12), random_image(1, 6, 6, 13)};
  auto avg = fsf::average_spectrum(two);
  auto a = fsf::spectrum_of(two[0]), b = fsf::spectrum_of(two[1]);
  for (std::size_t i = 0; i < avg.mag.size(); ++i) EXPECT_NEAR(avg.mag[i], 0.5 * (a.mag[i] + b.mag[i]), 1e-12);
  EXPECT_THROW(fsf::average_spectrum(std::vector<Image>{}), fsf::DataError);
}

TEST(AverageSpectrum, ZeroUpsampledCorpusShowsTiling) {
  std::vector<Image> corpus;
  for (std::uint64_t i = 0; i < 100; ++i) corpus.push_back(fsf::upsample_zero(fsf::synth_real(i, 16, 16)));
  EXPECT_GE(fsf::quadrant_correlation(fsf::average_spectrum(corpus)), 0.9);
}

TEST(Metrics, AucMatchesPairCounting) {
  auto pos = oracle::random_vector(40, 1, 0.2, 1.0);
  auto neg = oracle::random_vector(30, 2, 0.0, 0.8);
  neg[3] = pos[5];  // a tie
  EXPECT_NEAR(fsf::auc(pos, neg), oracle::pairwise_auc(pos, neg), 1e-12);
  EXPECT_DOUBLE_EQ(fsf::auc(std::vector<double>{2, 3}, std::vector<double>{0, 1}), 1.0);
}

TEST(SpectrumDisplay, ShiftedAndNormalized) {
  Image img(1, 8, 8, 1.0);
  auto d = fsf::spectrum_display(fsf::spectrum_of(img));
  EXPECT_DOUBLE_EQ(d(0, 4, 4), 1.0);
  EXPECT_NEAR(d(0, 0, 0), 0.0, 1e-12);
}
