#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "r2au/nn_blocks.hpp"

using namespace r2au;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -2, double hi = 2) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(s);
  for (double& v : t.values()) v = d(rng);
  return t;
}

std::pair<double, double> mean_std(std::span<const double> v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace

TEST(BatchNorm, TrainModeNormalizesEachChannel) {
  auto bn = BatchNormParams<double>::make(3);
  const auto y = batch_norm(constant(random_tensor({4, 3, 5, 5}, 1)), bn, Mode::train).value();
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> vals;
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t i = 0; i < 25; ++i) vals.push_back(y.at(n, c, i / 5, i % 5));
    const auto [m, s] = mean_std(vals);
    EXPECT_LT(std::abs(m), 1e-6);
    EXPECT_NEAR(s * s, 1.0, 1e-3);
  }
}

TEST(BatchNorm, ConstantInputGivesShift) {
  auto bn = BatchNormParams<double>::make(2);
  bn.shift.mutable_value() = Tensor<double>({1, 2, 1, 1}, std::vector<double>{0.25, -0.5});
  const auto y = batch_norm(constant(Tensor<double>({2, 2, 3, 3}, 7.0)), bn, Mode::train).value();
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_NEAR(y.at(1, 0, i / 3, i % 3), 0.25, 1e-12);
    EXPECT_NEAR(y.at(1, 1, i / 3, i % 3), -0.5, 1e-12);
  }
}

TEST(BatchNorm, RunningStatsFeedEvalMode) {
  auto bn = BatchNormParams<double>::make(1);
  const auto x = random_tensor({8, 1, 4, 4}, 3, 1.0, 3.0);
  batch_norm(constant(x), bn, Mode::train);
  const auto [m, s] = mean_std(x.values());
  const double n = static_cast<double>(x.size());
  EXPECT_NEAR(bn.running[0].mean[0], 0.1 * m, 1e-12);
  EXPECT_NEAR(bn.running[0].var[0], 0.9 + 0.1 * s * s * n / (n - 1), 1e-12);
  // Eval mode does not touch the running statistics.
  const double before = bn.running[0].mean[0];
  batch_norm(constant(x), bn, Mode::eval);
  EXPECT_EQ(bn.running[0].mean[0], before);
}

TEST(BatchNorm, ChannelMismatchThrows) {
  auto bn = BatchNormParams<double>::make(2);
  EXPECT_THROW(batch_norm(constant(random_tensor({1, 3, 2, 2}, 1)), bn, Mode::train), ShapeError);
}

TEST(HeInit, PaperScaleHasStdTwoOverRootN) {
  const auto w = he_init<double>(Shape{1, 1, 1000, 1000}, 4, std::uint64_t{11});
  const auto [m, s] = mean_std(w.values());
  EXPECT_LT(std::abs(m), 0.01);
  EXPECT_NEAR(s, 1.0, 0.02);
}

TEST(HeInit, KaimingScaleHasStdRootTwoOverN) {
  std::mt19937_64 rng(5);
  const auto w = he_init<double>(Shape{1, 1, 1000, 1000}, 8, rng, InitScheme::kaiming);
  EXPECT_NEAR(mean_std(w.values()).second, 0.5, 0.01);
}

TEST(HeInit, DeterministicAndRejectsZeroFanIn) {
  const auto a = he_init<float>(Shape{2, 3, 3, 3}, 27, std::uint64_t{7});
  const auto b = he_init<float>(Shape{2, 3, 3, 3}, 27, std::uint64_t{7});
  EXPECT_TRUE(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  EXPECT_THROW(he_init<float>(Shape{1, 1, 1, 1}, 0, std::uint64_t{1}), ArgumentError);
  EXPECT_EQ(parse_init_scheme("kaiming"), InitScheme::kaiming);
  EXPECT_THROW(parse_init_scheme("xavier"), ArgumentError);
}

TEST(RecurrentUnit, SingleTimestepIsConvReluBn) {
  std::mt19937_64 rng(2);
  auto u = RecurrentConvUnit<double>::make(2, 3, 3, 1, rng);
  const auto x = constant(random_tensor({2, 2, 5, 5}, 4));
  const auto a = recurrent_conv_forward(x, u, Mode::train).value();
  auto bn = BatchNormParams<double>::make(3);
  const auto b = batch_norm(relu(add_channel_bias(conv2d(x, u.theta_g), u.bias)), bn, Mode::train).value();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(RecurrentUnit, KeepsOneRunningSlotPerTimestep) {
  std::mt19937_64 rng(2);
  auto u = RecurrentConvUnit<double>::make(1, 2, 3, 3, rng);
  EXPECT_EQ(u.bn.running.size(), 3u);
  const auto y = recurrent_conv_forward(constant(random_tensor({1, 1, 4, 4}, 1)), u, Mode::train);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 4, 4}));
}

TEST(RecurrentResidual, ZeroOutputUnitIsIdentity) {
  std::mt19937_64 rng(3);
  auto u = RecurrentConvUnit<double>::make(3, 3, 3, 2, rng);
  u.bn.scale.mutable_value().fill(0.0);
  const auto x = random_tensor({2, 3, 4, 4}, 8);
  const auto y = recurrent_residual_forward(constant(x), u, std::optional<Var<double>>{}, Mode::train).value();
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
}

TEST(RecurrentResidual, ChannelChangeNeedsProjection) {
  std::mt19937_64 rng(3);
  auto u = RecurrentConvUnit<double>::make(2, 4, 3, 2, rng);
  const auto x = constant(random_tensor({1, 2, 4, 4}, 1));
  EXPECT_THROW(recurrent_residual_forward(x, u, std::optional<Var<double>>{}, Mode::train), ShapeError);
  std::optional<Var<double>> proj = constant(random_tensor({4, 2, 1, 1}, 2));
  EXPECT_EQ(recurrent_residual_forward(x, u, proj, Mode::train).shape(), (Shape{1, 4, 4, 4}));
}

TEST(AttentionGate, ZeroParametersGiveHalf) {
  std::mt19937_64 rng(1);
  auto g = AttentionGateParams<double>::make(4, 4, 2, rng);
  for (auto* v : {&g.w_att, &g.u_att, &g.psi, &g.b_g, &g.b_psi}) v->mutable_value().fill(0.0);
  const auto h = random_tensor({1, 4, 3, 3}, 2);
  const auto out = attention_gate(constant(h), constant(random_tensor({1, 4, 3, 3}, 3)), g);
  for (double a : out.alpha.value().values()) EXPECT_DOUBLE_EQ(a, 0.5);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_DOUBLE_EQ(out.gated.value()[i], 0.5 * h[i]);
}

TEST(AttentionGate, LargeBiasOpensGate) {
  std::mt19937_64 rng(1);
  auto g = AttentionGateParams<double>::make(2, 3, 1, rng);
  g.psi.mutable_value().fill(0.0);
  g.b_psi.mutable_value().fill(20.0);
  const auto h = random_tensor({1, 2, 3, 3}, 2);
  const auto out = attention_gate(constant(h), constant(random_tensor({1, 3, 3, 3}, 3)), g);
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(out.gated.value()[i], h[i], 1e-8);
}

TEST(AttentionGate, AlphaStaysInUnitIntervalAndShapesAreChecked) {
  std::mt19937_64 rng(9);
  auto g = AttentionGateParams<double>::make(2, 3, 2, rng);
  const auto out = attention_gate(constant(random_tensor({2, 2, 4, 4}, 1, -50, 50)),
                                  constant(random_tensor({2, 3, 4, 4}, 2, -50, 50)), g);
  EXPECT_EQ(out.alpha.shape(), (Shape{2, 1, 4, 4}));
  for (double a : out.alpha.value().values()) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  EXPECT_THROW(attention_gate(constant(random_tensor({1, 2, 4, 4}, 1)), constant(random_tensor({1, 3, 2, 2}, 2)), g),
               ShapeError);
}
