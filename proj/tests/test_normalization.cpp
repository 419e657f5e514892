#include <cmath>
#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "modln/errors.hpp"
#include "modln/normalization.hpp"
#include "oracles.hpp"

using namespace modln;

namespace {

Tensor normal(Shape shape, double sd, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

oracle::Matrix to_matrix(const Tensor& t) {
  oracle::Matrix m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t r = 0; r < t.dim(0); ++r) {
    for (std::size_t c = 0; c < t.dim(1); ++c) m[r][c] = t.at(r, c);
  }
  return m;
}

oracle::Modulator to_oracle(const ModLNParams& p) {
  oracle::Modulator m;
  m.gamma_1 = to_matrix(p.w_gamma_1);
  m.gamma_2 = to_matrix(p.w_gamma_2);
  m.beta_1 = to_matrix(p.w_beta_1);
  m.beta_2 = to_matrix(p.w_beta_2);
  m.bias.assign(p.bias.data().begin(), p.bias.data().end());
  m.gain_offset = p.gain_offset;
  m.eps = p.eps;
  return m;
}

ModLNParams random_params(std::size_t labels, std::size_t d, double offset, std::mt19937_64& rng) {
  ModLNParams p = ModLNParams::init(labels, d, offset, 1e-5, rng);
  p.w_gamma_1 = normal({labels, d / 2}, 0.7, rng);
  p.w_gamma_2 = normal({d / 2, d}, 0.7, rng);
  p.w_beta_1 = normal({labels, d / 2}, 0.7, rng);
  p.w_beta_2 = normal({d / 2, d}, 0.7, rng);
  p.bias = normal({d / 2}, 0.7, rng);
  return p;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

}  // namespace

TEST(Swish, HandExamples) {
  EXPECT_EQ(swish(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(swish(Tensor::scalar(1.0)).item(), 0.731059, 1e-6);
  const double s = swish(Tensor::scalar(-20.0)).item();
  EXPECT_NEAR(s, -20.0 / (1.0 + std::exp(20.0)), 1e-20);
  EXPECT_LT(s, 0.0);
}

TEST(VanillaLN, HandExamples) {
  auto ones = Tensor::full({3}, 1.0), zeros = Tensor::zeros({3});
  auto c = vanilla_ln(Tensor::full({2, 3}, 7.0), ones, zeros, 1e-5);
  for (double v : c.data()) EXPECT_EQ(v, 0.0);

  auto y = vanilla_ln(Tensor::from({3}, {1, 2, 3}), ones, zeros, 0.0);
  EXPECT_NEAR(y.at(0), -1.224745, 1e-6);
  EXPECT_EQ(y.at(1), 0.0);
  EXPECT_NEAR(y.at(2), 1.224745, 1e-6);

  auto beta = Tensor::from({3}, {4, 5, 6});
  auto z = vanilla_ln(Tensor::from({3}, {1, 9, -3}), Tensor::zeros({3}), beta, 1e-5);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(z.at(i), beta.at(i));
}

TEST(Modulator, ZeroOuterMatrixGivesZeros) {
  std::mt19937_64 rng(5);
  auto w1 = normal({4, 3}, 1.0, rng);
  for (int l = 0; l < 4; ++l) {
    auto out = mlp_modulator(EmotionLabel::make(l, 4), w1, Tensor::zeros({3, 6}));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Modulator, OneHotSelectsRow) {
  std::mt19937_64 rng(6);
  auto w1 = normal({4, 3}, 1.0, rng);
  auto bias = normal({3}, 1.0, rng);
  // Identity outer matrix exposes swish(pre-activation) directly.
  auto eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  auto out = mlp_modulator(EmotionLabel::make(2, 4), w1, eye, bias);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(out.at(j), oracle::swish(w1.at(2, j) + bias.at(j)), 1e-15);
}

TEST(ModLN, HandExample) {
  std::mt19937_64 rng(1);
  ModLNParams p = ModLNParams::init(2, 4, 0.0, 1e-5, rng);
  // Both inner units give swish(1) = s; outer entries target / (2 s) make the
  // scale 2 and the shift 1.
  const double v = 1.0, s = oracle::swish(v);
  p.w_gamma_1 = Tensor::full({2, 2}, v, true);
  p.w_gamma_2 = Tensor::full({2, 4}, 2.0 / (2.0 * s), true);
  p.w_beta_1 = Tensor::full({2, 2}, v, true);
  p.w_beta_2 = Tensor::full({2, 4}, 1.0 / (2.0 * s), true);
  p.eps = 1e-300;
  auto y = mod_ln(Tensor::from({4}, {0, 1, 2, 3}), EmotionLabel::make(0, 2), p);
  // (x - 1.5) / sqrt(1.25), scaled by 2, shifted by 1.
  const double sd = std::sqrt(1.25);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y.at(i), 2.0 * (static_cast<double>(i) - 1.5) / sd + 1.0, 1e-12);
}

TEST(ModLN, ThreeFeatureHandExample) {
  // dim 3 is odd, so the oracle example runs through the same arithmetic on
  // explicit scale [2,2,2] and shift [1,1,1].
  auto y = add(mul(normalize_last(Tensor::from({3}, {1, 2, 3}), 0.0), Tensor::full({3}, 2.0)), Tensor::full({3}, 1.0));
  EXPECT_NEAR(y.at(0), -1.449490, 1e-6);
  EXPECT_NEAR(y.at(1), 1.0, 1e-15);
  EXPECT_NEAR(y.at(2), 3.449490, 1e-6);
}

TEST(ModLN, ZeroGainZeroShiftGivesZeros) {
  std::mt19937_64 rng(2);
  ModLNParams p = ModLNParams::init(3, 6, 0.0, 1e-5, rng);
  auto y = mod_ln(normal({4, 6}, 1.0, rng), EmotionLabel::make(1, 3), p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(ModLN, MatchesStraightLineOracle) {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> dims(1, 8), labels(1, 6);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 * static_cast<std::size_t>(dims(rng));
    const int l = labels(rng);
    const double offset = trial % 2 == 0 ? 0.0 : 1.0;
    auto p = random_params(static_cast<std::size_t>(l), d, offset, rng);
    auto x = normal({3, d}, 2.0, rng);
    const int label = static_cast<int>(rng() % static_cast<std::uint64_t>(l));
    auto y = mod_ln(x, EmotionLabel::make(label, l), p);
    const auto ref = to_oracle(p);
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<double> row(x.data().begin() + static_cast<std::ptrdiff_t>(r * d),
                              x.data().begin() + static_cast<std::ptrdiff_t>((r + 1) * d));
      auto expect = oracle::mod_ln_row(row, label, ref);
      for (std::size_t k = 0; k < d; ++k) worst = std::max(worst, std::abs(y.at(r, k) - expect[k]));
    }
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(ModLN, BatchedFormMatchesPerSequence) {
  std::mt19937_64 rng(8);
  auto p = random_params(4, 6, 1.0, rng);
  auto x = normal({3 * 5, 6}, 1.0, rng);
  const std::vector<int> labels = {2, 0, 3};
  auto y = mod_ln(x, one_hot_rows(labels, 4), p);
  for (std::size_t b = 0; b < 3; ++b) {
    std::vector<double> block(x.data().begin() + static_cast<std::ptrdiff_t>(b * 30),
                              x.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * 30));
    auto single = mod_ln(Tensor::from({5, 6}, block), EmotionLabel::make(labels[b], 4), p);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(y.at(b * 30 + i), single.at(i));
  }
}

TEST(ModLN, ReducesToVanillaBitwise) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    ModLNParams p = ModLNParams::init(8, 16, 1.0, 1e-5, rng);
    p.bias = normal({8}, 1.0, rng);
    auto x = normal({5, 16}, 3.0, rng);
    auto vanilla = vanilla_ln(x, VanillaLNParams::identity(16, 1e-5));
    for (int l = 0; l < 8; ++l) EXPECT_TRUE(bitwise_equal(mod_ln(x, EmotionLabel::make(l, 8), p), vanilla));
    const std::vector<int> labels = {0, 7, 3, 3, 1};
    auto batched = mod_ln(x, one_hot_rows(labels, 8), p);
    EXPECT_TRUE(bitwise_equal(batched, vanilla));
  }
}

TEST(ModLN, InitIsPinned) {
  std::mt19937_64 rng(10);
  ModLNParams p = ModLNParams::init(8, 64, 1.0, 1e-5, rng);
  for (double v : p.w_gamma_2.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.w_beta_2.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.bias.data()) EXPECT_EQ(v, 0.0);
  double ss = 0.0;
  for (double v : p.w_gamma_1.data()) ss += v * v;
  for (double v : p.w_beta_1.data()) ss += v * v;
  const double sd = std::sqrt(ss / static_cast<double>(2 * 8 * 32));
  EXPECT_NEAR(sd, 0.02, 0.003);
}

TEST(ModLN, Errors) {
  std::mt19937_64 rng(11);
  EXPECT_THROW(ModLNParams::init(4, 7, 1.0, 1e-5, rng), ConfigError);
  EXPECT_THROW(ModLNParams::init(4, 0, 1.0, 1e-5, rng), ConfigError);
  EXPECT_THROW(EmotionLabel::make(4, 4), IndexError);
  EXPECT_THROW(EmotionLabel::make(-1, 4), IndexError);
  auto p = ModLNParams::init(4, 6, 1.0, 1e-5, rng);
  EXPECT_THROW(mod_ln(Tensor::zeros({2, 4}), EmotionLabel::make(0, 4), p), DimensionError);
  EXPECT_THROW(mod_ln(Tensor::zeros({2, 6}), EmotionLabel::make(0, 5), p), IndexError);
}

TEST(ModLN, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(12);
  auto p = random_params(3, 6, 1.0, rng);
  auto x = normal({2 * 4, 6}, 1.0, rng);
  const std::vector<int> labels = {2, 1};
  std::vector<NamedTensor> params = {{"x", x},
                                     {"w_gamma_1", p.w_gamma_1},
                                     {"w_gamma_2", p.w_gamma_2},
                                     {"w_beta_1", p.w_beta_1},
                                     {"w_beta_2", p.w_beta_2},
                                     {"bias", p.bias}};
  auto w = normal({8, 6}, 1.0, rng);
  w.set_requires_grad(false);
  auto report = finite_diff_check([&] { return sum(mul(mod_ln(x, one_hot_rows(labels, 3), p), w)); }, params);
  EXPECT_LT(report.max_rel_error, 1e-4) << report.param << "[" << report.index << "]";
}
