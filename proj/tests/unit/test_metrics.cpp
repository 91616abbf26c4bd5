#include <gtest/gtest.h>

#include <random>

#include "qat/metrics.hpp"
#include "qat/oracle.hpp"

using namespace qat;

TEST(ComputeTr, Examples) {
  std::vector<std::int32_t> a{0, 1, 2, 3}, b{0, 1, 2, 2}, c{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(compute_tr(a, b), 0.25);
  EXPECT_DOUBLE_EQ(compute_tr(a, a), 0.0);
  EXPECT_DOUBLE_EQ(compute_tr(a, c), 1.0);
}

TEST(ComputeTr, EmptyOrMismatchThrows) {
  std::vector<std::int32_t> e, a{1};
  EXPECT_ANY_THROW(compute_tr(e, e));
  EXPECT_ANY_THROW(compute_tr(a, e));
}

TEST(RunningTr, Examples) {
  EXPECT_NEAR(update_running_tr(0.0, 0.01, 0.99), 1e-4, 1e-18);
  EXPECT_DOUBLE_EQ(update_running_tr(0.3, 0.7, 0.0), 0.7);
  EXPECT_DOUBLE_EQ(update_running_tr(0.2, 0.2, 0.9), 0.2);
  EXPECT_ANY_THROW(update_running_tr(0.0, 0.1, 1.0));
  EXPECT_ANY_THROW(update_running_tr(0.0, 0.1, -0.1));
}

TEST(RunningTr, ConvexCombination) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double kp = u(rng), k = u(rng), m = u(rng) * 0.999;
    const double K = update_running_tr(kp, k, m);
    EXPECT_GE(K, std::min(kp, k) - 1e-15);
    EXPECT_LE(K, std::max(kp, k) + 1e-15);
  }
}

TEST(AvgEss, Examples) {
  std::vector<double> a{0.1, 0.2}, b{-0.5, 0.5}, c{0.0, 0.5};
  EXPECT_EQ(avg_effective_step_size<double>(std::span<const double>(a), std::span<const double>(a)), 0.0);
  EXPECT_DOUBLE_EQ(avg_effective_step_size<double>(std::span<const double>(b), std::span<const double>(c)), 0.25);
  std::vector<double> m1(5, -1.0), p1(5, 1.0);
  EXPECT_DOUBLE_EQ(avg_effective_step_size<double>(std::span<const double>(m1), std::span<const double>(p1)), 2.0);
  EXPECT_THROW(avg_effective_step_size<double>(std::span<const double>(a), std::span<const double>(m1)), ShapeError);
}

TEST(DistanceToTp, Examples) {
  auto s = QuantizerSpec::make(4, QuantRole::weight);
  std::vector<double> ints{-3.0, 0.0, 2.0}, halves{-2.5, 0.5, 1.5}, mixed{0.1, 0.8};
  EXPECT_DOUBLE_EQ(mean_distance_to_transition_points<double>(std::span<const double>(ints), s), 0.5);
  EXPECT_DOUBLE_EQ(mean_distance_to_transition_points<double>(std::span<const double>(halves), s), 0.0);
  EXPECT_NEAR(mean_distance_to_transition_points<double>(std::span<const double>(mixed), s), 0.35, 1e-15);
}

TEST(DistanceToTp, ClippedEndpointsUseInnermostPoint) {
  auto s = QuantizerSpec::make(2, QuantRole::weight);  // points -1.5, -0.5, 0.5
  EXPECT_DOUBLE_EQ(distance_to_transition_point(-2.0, s), 0.5);
  EXPECT_DOUBLE_EQ(distance_to_transition_point(1.0, s), 0.5);
  auto b = QuantizerSpec::make(1, QuantRole::weight);
  EXPECT_DOUBLE_EQ(distance_to_transition_point(-0.3, b), 0.3);
  auto ba = QuantizerSpec::make(1, QuantRole::activation);
  EXPECT_DOUBLE_EQ(distance_to_transition_point(0.9, ba), 0.4);
}

TEST(TransitionTracker, MatchesOracleOnRandomLayers) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  for (int rep = 0; rep < 200; ++rep) {
    const int bits = std::array<int, 3>{1, 2, 4}[rep % 3];
    auto spec = QuantizerSpec::make(bits, QuantRole::weight, 0.5);
    std::vector<float> a(97), b(97);
    for (std::size_t i = 0; i < a.size(); ++i) {
      a[i] = static_cast<float>(nd(rng) * 0.2);
      b[i] = static_cast<float>(a[i] + nd(rng) * 0.02);
    }
    TransitionTracker t;
    t.reset<float>(std::span<const float>(a), spec);
    const double k = t.observe<float>(std::span<const float>(b), spec);
    oracle::Levels L{spec.alpha, spec.beta, spec.gamma, spec.scale, bits == 1, true};
    const auto n = oracle::recount_transitions<float>(std::span<const float>(a), std::span<const float>(b), L);
    EXPECT_EQ(k, static_cast<double>(n) / 97.0);
    EXPECT_EQ(t.last_changed(), n);
  }
}

TEST(TransitionTracker, EmptyLayerThrows) {
  TransitionTracker t;
  std::vector<float> e;
  EXPECT_ANY_THROW(t.reset<float>(std::span<const float>(e), QuantizerSpec::make(2, QuantRole::weight)));
}

TEST(EssIdentity, SingleLevelUpdatesHoldExactly) {
  std::mt19937_64 rng(2);
  auto spec = QuantizerSpec::make(3, QuantRole::weight, 1.0);
  std::uniform_int_distribution<int> code(-3, 2);
  std::bernoulli_distribution flip(0.3);
  std::vector<double> b(400), a(400);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const int c = code(rng);
    b[i] = (c + 0.2) / spec.gamma;
    a[i] = ((flip(rng) ? c + 1 : c) - 0.2) / spec.gamma;
  }
  auto qb = quantize_forward<double>(std::span<const double>(b), spec);
  auto qa = quantize_forward<double>(std::span<const double>(a), spec);
  const double k = compute_tr(qb.codes, qa.codes);
  const double ess = avg_effective_step_size<double>(std::span<const double>(qb.values), std::span<const double>(qa.values));
  EXPECT_NEAR(ess, k / spec.gamma, 1e-12);
}

TEST(EssIdentity, MultiLevelJumpsOnlyIncreaseEss) {
  auto spec = QuantizerSpec::make(4, QuantRole::weight, 1.0);
  std::vector<double> b{0.0, 0.0, 0.1}, a{0.3, 0.0, 0.1};  // code 0 -> 2
  auto qb = quantize_forward<double>(std::span<const double>(b), spec);
  auto qa = quantize_forward<double>(std::span<const double>(a), spec);
  const double k = compute_tr(qb.codes, qa.codes);
  const double ess = avg_effective_step_size<double>(std::span<const double>(qb.values), std::span<const double>(qa.values));
  EXPECT_GT(ess, k * spec.level_spacing());
}
