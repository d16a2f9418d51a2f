#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "r2au/losses.hpp"
#include "r2au/metrics.hpp"

using namespace r2au;

namespace {

std::vector<float> random_binary(std::size_t n, std::uint64_t seed, double p = 0.3) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  std::vector<float> v(n);
  for (float& x : v) x = coin(rng) ? 1.f : 0.f;
  return v;
}

}  // namespace

TEST(Confusion, CountsEnumeration) {
  const std::vector<float> p{1, 1, 0, 0}, g{1, 0, 1, 0};
  const auto c = confusion<float>(p, g);
  EXPECT_EQ(c, (ConfusionCounts{1, 1, 1, 1}));
  const std::vector<float> ones(6, 1.f), zeros(6, 0.f);
  EXPECT_EQ(confusion<float>(ones, zeros).fp, 6u);
  EXPECT_EQ(confusion<float>(ones, ones).fn, 0u);
}

TEST(Confusion, RejectsBadInput) {
  const std::vector<float> a{1, 0}, b{1, 0, 1}, c{0.5f, 1};
  EXPECT_THROW(confusion<float>(a, b), ShapeError);
  EXPECT_THROW(confusion<float>(c, a), ArgumentError);
}

TEST(ScalarMetrics, UnitConfusion) {
  const auto m = scalar_metrics({1, 1, 1, 1});
  EXPECT_DOUBLE_EQ(m.dice, 0.5);
  EXPECT_DOUBLE_EQ(m.precision, 0.5);
  EXPECT_DOUBLE_EQ(m.recall, 0.5);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(m.cohen_kappa, 0.0);
}

TEST(ScalarMetrics, PerfectAndDegenerateCounts) {
  const auto perfect = scalar_metrics({5, 0, 0, 7});
  EXPECT_DOUBLE_EQ(perfect.dice, 1.0);
  EXPECT_DOUBLE_EQ(perfect.cohen_kappa, 1.0);
  const auto empty = scalar_metrics({0, 0, 0, 9});
  EXPECT_DOUBLE_EQ(empty.dice, 1.0);
  EXPECT_DOUBLE_EQ(empty.precision, 1.0);
  EXPECT_DOUBLE_EQ(empty.recall, 1.0);
  EXPECT_DOUBLE_EQ(empty.cohen_kappa, 1.0);
  const auto missed = scalar_metrics({0, 0, 3, 9});
  EXPECT_DOUBLE_EQ(missed.precision, 0.0);
  EXPECT_DOUBLE_EQ(missed.recall, 0.0);
}

TEST(ScalarMetrics, SwapSymmetryAndDiceAgreement) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = random_binary(200, s), g = random_binary(200, s + 50);
    const auto a = scalar_metrics(confusion<float>(p, g));
    const auto b = scalar_metrics(confusion<float>(g, p));
    EXPECT_DOUBLE_EQ(a.dice, b.dice);
    EXPECT_DOUBLE_EQ(a.accuracy, b.accuracy);
    EXPECT_DOUBLE_EQ(a.precision, b.recall);
    EXPECT_GE(a.cohen_kappa, -1.0);
    EXPECT_LE(a.cohen_kappa, 1.0);
    const Tensor<float> tp({1, 1, 1, 200}, p), tg({1, 1, 1, 200}, g);
    EXPECT_EQ(a.dice, dice_coefficient(tp, tg));
  }
}

TEST(RocAuc, ExtremesAndTies) {
  const std::vector<float> g{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc<float>(std::vector<float>{0.1f, 0.2f, 0.8f, 0.9f}, g), 1.0);
  EXPECT_DOUBLE_EQ(roc_auc<float>(std::vector<float>{0.9f, 0.8f, 0.2f, 0.1f}, g), 0.0);
  EXPECT_DOUBLE_EQ(roc_auc<float>(std::vector<float>(4, 0.3f), g), 0.5);
  EXPECT_THROW(roc_auc<float>(std::vector<float>{0.1f, 0.2f}, std::vector<float>{1, 1}), MetricError);
}

TEST(RocAuc, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const auto gf = random_binary(300, 8, 0.4);
  std::vector<double> g(gf.begin(), gf.end()), s(300), t(300);
  for (std::size_t i = 0; i < 300; ++i) {
    s[i] = std::round(u(rng) * 20) / 20 + 0.3 * g[i];  // with ties
    t[i] = std::exp(3 * s[i]) - 7;
  }
  const double a = roc_auc<double>(s, g);
  EXPECT_GT(a, 0.5);
  EXPECT_DOUBLE_EQ(a, roc_auc<double>(t, g));
}
