#include <gtest/gtest.h>

#include <random>

#include "qat/quantizer.hpp"

using namespace qat;

TEST(QuantizerSpec, WeightConstants) {
  auto s = QuantizerSpec::make(2, QuantRole::weight);
  EXPECT_EQ(s.alpha, -2);
  EXPECT_EQ(s.beta, 1);
  EXPECT_EQ(s.gamma, 2);
  auto s4 = QuantizerSpec::make(4, QuantRole::weight);
  EXPECT_EQ(s4.alpha, -8);
  EXPECT_EQ(s4.beta, 7);
  EXPECT_EQ(s4.gamma, 8);
}

TEST(QuantizerSpec, ActivationConstants) {
  auto s = QuantizerSpec::make(2, QuantRole::activation);
  EXPECT_EQ(s.alpha, 0);
  EXPECT_EQ(s.beta, 3);
  EXPECT_EQ(s.gamma, 4);
}

TEST(QuantizerSpec, OneBitUsesSignum) {
  auto w = QuantizerSpec::make(1, QuantRole::weight);
  EXPECT_EQ(w.discretization, Discretization::signum);
  EXPECT_EQ(w.alpha, -1);
  EXPECT_EQ(w.beta, 1);
  EXPECT_EQ(w.gamma, 1);
  EXPECT_DOUBLE_EQ(w.level_spacing(), 2.0);
  auto a = QuantizerSpec::make(1, QuantRole::activation);
  EXPECT_EQ(a.alpha, 0);
  EXPECT_EQ(a.beta, 1);
}

TEST(QuantizerSpec, RejectsBadInputs) {
  EXPECT_THROW(QuantizerSpec::make(0, QuantRole::weight), QuantizerError);
  EXPECT_THROW(QuantizerSpec::make(2, QuantRole::weight, 0.0), QuantizerError);
  EXPECT_THROW(QuantizerSpec::make(2, QuantRole::weight, -1.0), QuantizerError);
}

TEST(Quantize, TwoBitWeightExamples) {
  auto s = QuantizerSpec::make(2, QuantRole::weight, 1.0);
  std::vector<double> x{0.3, -0.3, 0.9, -2.0, 0.0};
  auto r = quantize_forward<double>(std::span<const double>(x), s);
  // x_n = 0.6, -0.6, 1.8 -> clip 1, -4 -> clip -2, 0
  EXPECT_EQ(r.codes, (std::vector<std::int32_t>{1, -1, 1, -2, 0}));
  EXPECT_DOUBLE_EQ(r.values[0], 0.5);
  EXPECT_DOUBLE_EQ(r.values[3], -1.0);
}

TEST(Quantize, HalfRoundsAwayFromZero) {
  auto s = QuantizerSpec::make(2, QuantRole::weight, 1.0);
  std::vector<double> x{0.25, -0.25};  // x_n = +-0.5
  auto r = quantize_forward<double>(std::span<const double>(x), s);
  EXPECT_EQ(r.codes[0], 1);
  EXPECT_EQ(r.codes[1], -1);
}

TEST(Quantize, SignumZeroMapsToPlusOne) {
  auto s = QuantizerSpec::make(1, QuantRole::weight, 1.0);
  std::vector<double> x{0.0, -1e-9, 3.0};
  auto r = quantize_forward<double>(std::span<const double>(x), s);
  EXPECT_EQ(r.codes, (std::vector<std::int32_t>{1, -1, 1}));
}

TEST(Quantize, BinaryActivationThreshold) {
  auto s = QuantizerSpec::make(1, QuantRole::activation, 1.0);
  std::vector<double> x{0.49, 0.5, -1.0};
  auto r = quantize_forward<double>(std::span<const double>(x), s);
  EXPECT_EQ(r.codes, (std::vector<std::int32_t>{0, 1, 0}));
}

TEST(Quantize, NanInputThrows) {
  auto s = QuantizerSpec::make(2, QuantRole::weight);
  std::vector<double> x{std::nan("")};
  EXPECT_THROW(quantize_forward<double>(std::span<const double>(x), s), QuantizerError);
}

TEST(Quantize, OutputsLieOnGrid) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int bits : {2, 3, 4, 8})
    for (auto role : {QuantRole::weight, QuantRole::activation}) {
      auto s = QuantizerSpec::make(bits, role, 1.3);
      std::vector<double> x(500);
      for (auto& v : x) v = nd(rng);
      auto r = quantize_forward<double>(std::span<const double>(x), s);
      for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_GE(r.codes[i], s.alpha);
        EXPECT_LE(r.codes[i], s.beta);
        EXPECT_DOUBLE_EQ(r.values[i] * s.gamma, r.codes[i]);
      }
    }
}

TEST(QuantizeBackward, StraightThroughInsideZeroOutside) {
  auto s = QuantizerSpec::make(2, QuantRole::weight, 2.0);
  std::vector<double> x{0.1, 5.0, -5.0, -0.7};
  std::vector<double> up{1, 1, 1, 2};
  auto g = quantize_backward<double>(std::span<const double>(x), s, std::span<const double>(up));
  EXPECT_DOUBLE_EQ(g.grad_x[0], 0.5);
  EXPECT_DOUBLE_EQ(g.grad_x[1], 0.0);
  EXPECT_DOUBLE_EQ(g.grad_x[2], 0.0);
  EXPECT_DOUBLE_EQ(g.grad_x[3], 1.0);
  EXPECT_FALSE(g.grad_s.has_value());
}

TEST(QuantizeBackward, SizeMismatchThrows) {
  auto s = QuantizerSpec::make(2, QuantRole::weight);
  std::vector<double> x{0.1, 0.2}, up{1};
  EXPECT_THROW(quantize_backward<double>(std::span<const double>(x), s, std::span<const double>(up)), ShapeError);
}

TEST(QuantizeTape, ScaleGradientOnlyWhenTrainable) {
  auto spec = QuantizerSpec::make(2, QuantRole::weight);
  Tensor<double> x(Shape{2}, std::vector<double>{0.2, -0.1}, true);
  Tensor<double> s(Shape{1}, 1.0, true);
  Tape<double> t;
  auto q = quantize(t, x, spec, s);
  auto l = sum(t, q);
  t.backward(l);
  // -x/s^2 summed over inside elements
  EXPECT_DOUBLE_EQ(s.grad()[0], -(0.2 - 0.1));

  Tensor<double> s2(Shape{1}, 1.0, false);
  Tensor<double> x2(Shape{2}, std::vector<double>{0.2, -0.1}, true);
  Tape<double> t2;
  auto l2 = sum(t2, quantize(t2, x2, spec, s2));
  t2.backward(l2);
  EXPECT_FALSE(s2.has_grad());
}

TEST(InitScale, GaussianMeanAbs) {
  std::vector<double> w{1.0, -1.0};
  const double s = init_scale<double>(std::span<const double>(w), QuantizerSpec::make(2, QuantRole::weight));
  EXPECT_NEAR(s, 3.0 / std::sqrt(2.0 / 3.14159265358979323846), 1e-12);
  std::vector<double> z{0.0, 0.0};
  EXPECT_EQ(init_scale<double>(std::span<const double>(z), QuantizerSpec::make(2, QuantRole::weight)), 1.0);
}

TEST(CountCodesChanged, Basic) {
  std::vector<std::int32_t> a{1, 2, 3}, b{1, 0, 3};
  EXPECT_EQ(count_codes_changed(a, b), 1u);
  std::vector<std::int32_t> c{1};
  EXPECT_THROW(count_codes_changed(a, c), ShapeError);
}
