#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "r2au/gradcheck.hpp"
#include "r2au/ops.hpp"

using namespace r2au;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(s);
  for (double& v : t.values()) v = d(rng);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor<float>(Shape{1, 1, 2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
  Tensor<float> t(Shape{2, 3, 4, 5}, 1.5f);
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.index(1, 2, 3, 4), 119u);
  EXPECT_TRUE(t.all_finite());
  t[7] = NAN;
  EXPECT_FALSE(t.all_finite());
}

TEST(ConvGeometry, SamePaddingPutsOddPixelBottomRight) {
  const auto g = conv_geometry(5, 5, 3, 3, {2, Padding::same});
  EXPECT_EQ(g.out_h, 3u);
  EXPECT_EQ(g.pad_top, 1u);
  const auto e = conv_geometry(4, 4, 3, 3, {2, Padding::same});
  EXPECT_EQ(e.out_h, 2u);
  EXPECT_EQ(e.pad_top, 0u);  // total padding 1 goes to the bottom
  const auto v = conv_geometry(7, 7, 3, 3, {2, Padding::valid});
  EXPECT_EQ(v.out_h, 3u);
}

TEST(Ops, Conv2dIdentityKernel) {
  const auto x = random_tensor({2, 1, 5, 5}, 1);
  Tensor<double> k({1, 1, 3, 3});
  k.at(0, 0, 1, 1) = 1.0;
  const auto y = conv2d(constant(x), constant(k)).value();
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Ops, Conv2dChannelMismatchThrows) {
  const auto x = constant(random_tensor({1, 2, 4, 4}, 1));
  const auto k = constant(random_tensor({1, 3, 3, 3}, 2));
  EXPECT_THROW(conv2d(x, k), ShapeError);
}

TEST(Ops, TransposedConvIsAdjointOfStridedConv) {
  // <conv(x, K), y> == <x, conv_t(y, K')>, K' = K with channel axes swapped.
  const auto x = random_tensor({2, 3, 8, 8}, 3);
  const auto k = random_tensor({4, 3, 2, 2}, 4);
  Tensor<double> kt({3, 4, 2, 2});
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) kt.at(i, o, a, b) = k.at(o, i, a, b);
  const auto cx = conv2d(constant(x), constant(k), {2, Padding::valid}).value();
  const auto y = random_tensor(cx.shape(), 5);
  const auto ty = conv2d_transpose(constant(y), constant(kt), {2, Padding::valid}).value();
  ASSERT_EQ(ty.shape(), x.shape());
  EXPECT_NEAR(dot(cx, y), dot(x, ty), 1e-10);
}

TEST(Ops, TransposedConvOutputSides) {
  const auto x = constant(random_tensor({1, 2, 5, 5}, 1));
  EXPECT_EQ(conv2d_transpose(x, constant(random_tensor({3, 2, 2, 2}, 2))).shape(), (Shape{1, 3, 10, 10}));
  EXPECT_EQ(conv2d_transpose(x, constant(random_tensor({3, 2, 3, 3}, 2)), {2, Padding::same}).shape(),
            (Shape{1, 3, 10, 10}));
  EXPECT_EQ(conv2d_transpose(x, constant(random_tensor({3, 2, 3, 3}, 2)), {2, Padding::valid}).shape(),
            (Shape{1, 3, 11, 11}));
}

TEST(Ops, MaxPoolPicksWindowMaximum) {
  Tensor<double> x({1, 1, 2, 4}, std::vector<double>{1, 5, 2, 2, 3, 4, 2, 2});
  const auto y = maxpool2d(constant(x)).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(y[0], 5.0);
  EXPECT_EQ(y[1], 2.0);
  // Tied window routes the whole gradient to its first element.
  Var<double> v(x, true);
  sum(maxpool2d(v)).backward();
  EXPECT_EQ(v.grad()[2], 1.0);
  EXPECT_EQ(v.grad()[3] + v.grad()[6] + v.grad()[7], 0.0);
}

TEST(Ops, SigmoidStaysInsideOpenInterval) {
  Tensor<float> x({1, 1, 1, 3}, std::vector<float>{-200.f, 0.f, 200.f});
  const auto y = sigmoid(constant(x)).value();
  EXPECT_GT(y[0], 0.f);
  EXPECT_FLOAT_EQ(y[1], 0.5f);
  EXPECT_LT(y[2], 1.f);
}

TEST(Ops, ScaleByMapBroadcastsOverChannels) {
  auto x = constant(Tensor<double>({1, 2, 1, 2}, std::vector<double>{1, 2, 3, 4}));
  auto m = constant(Tensor<double>({1, 1, 1, 2}, std::vector<double>{10, 100}));
  const auto y = scale_by_map(x, m).value();
  EXPECT_EQ(y[0], 10);
  EXPECT_EQ(y[1], 200);
  EXPECT_EQ(y[2], 30);
  EXPECT_EQ(y[3], 400);
}

TEST(Autodiff, GradientsAccumulateAcrossUses) {
  Var<double> a(Tensor<double>::scalar(3.0), true);
  sum(add(mul(a, a), a)).backward();
  EXPECT_DOUBLE_EQ(a.grad()[0], 7.0);
}

TEST(Autodiff, NoGradGuardSkipsRecording) {
  Var<double> a(Tensor<double>::scalar(2.0), true);
  Var<double> b;
  {
    NoGradGuard g;
    b = mul(a, a);
  }
  EXPECT_FALSE(b.requires_grad());
  EXPECT_TRUE(GradMode::enabled());
}

TEST(GradCheck, AgreesOnSmoothComposite) {
  const auto x = random_tensor({1, 2, 3, 3}, 9, 0.5, 2.0);
  const double err = grad_check([](const Var<double>& v) { return sum(mul(log(v), tanh(v))); }, x);
  EXPECT_LT(err, 1e-8);
}

TEST(GradCheck, NonFiniteObjectiveThrows) {
  const auto x = random_tensor({1, 1, 2, 2}, 1, -2.0, -1.0);
  EXPECT_THROW(grad_check([](const Var<double>& v) { return sum(log(v)); }, x), EvaluationError);
}

TEST(GradCheck, WrongGradientIsCaught) {
  // A deliberately broken backward rule: derivative of x^2 reported as x.
  Var<double> x(random_tensor({1, 1, 2, 2}, 4, 0.5, 1.5), true);
  auto broken = [&] {
    Tensor<double> sq(x.shape());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = x.value()[i] * x.value()[i];
    Var<double> y = Var<double>::make(std::move(sq), {x}, [](Node<double>& n) {
      auto& g = n.parent(0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * n.parent(0).value[i];
    });
    return sum(y);
  };
  const auto rep = grad_check(broken, {x}, 1e-5, 0, 0, true, 1e-6);
  EXPECT_GT(rep.max_relative_error, 0.1);
}
