#include <gtest/gtest.h>

#include <random>

#include "qat/scheduler.hpp"

using namespace qat;

namespace {
TrControllerState st(double U, double eta = 0.1, TalrRule rule = TalrRule::additive, double m = 0.99) {
  TrControllerState s;
  s.talr = U;
  s.gain = eta;
  s.rule = rule;
  s.momentum_m = m;
  return s;
}
}  // namespace

TEST(InitialTargetTr, Examples) {
  EXPECT_NEAR(initial_target_tr(5e-3, 2), 7.0710678118654752e-3, 1e-15);
  EXPECT_DOUBLE_EQ(initial_target_tr(4e-3, 1), 4e-3);
  EXPECT_NEAR(initial_target_tr(1e-3, 4), 2e-3, 1e-18);
}

TEST(Schedule, Endpoints) {
  Schedule c{ScheduleKind::cosine, 0.3, 100};
  EXPECT_DOUBLE_EQ(c.value(0), 0.3);
  EXPECT_NEAR(c.value(100), 0.0, 1e-17);
  EXPECT_NEAR(c.value(50), 0.15, 1e-15);
  Schedule l{ScheduleKind::linear, 0.3, 100};
  EXPECT_DOUBLE_EQ(l.value(100), 0.0);
  Schedule k{ScheduleKind::constant, 0.3, 100};
  EXPECT_DOUBLE_EQ(k.value(77), 0.3);
}

TEST(Schedule, StepExample) {
  Schedule s{ScheduleKind::step, 0.1, 1000, 100, 5.0};
  EXPECT_NEAR(s.value(250), 0.004, 1e-15);
  EXPECT_DOUBLE_EQ(s.value(99), 0.1);
}

TEST(Schedule, OutOfRangeThrows) {
  Schedule c{ScheduleKind::cosine, 0.3, 100};
  EXPECT_ANY_THROW(c.value(-1));
  EXPECT_ANY_THROW(c.value(101));
}

TEST(Schedule, NonNegativeEverywhere) {
  for (auto kind : {ScheduleKind::cosine, ScheduleKind::linear, ScheduleKind::step, ScheduleKind::constant}) {
    Schedule s{kind, 0.2, 500, 50, 5.0};
    for (long t = 0; t <= 500; ++t) EXPECT_GE(s.value(t), 0.0);
  }
}

TEST(Additive, Examples) {
  EXPECT_NEAR(update_talr_additive(st(0.1), 0.005, 0.003).talr, 0.1002, 1e-12);
  EXPECT_EQ(update_talr_additive(st(0.1), 0.004, 0.004).talr, 0.1);
  EXPECT_EQ(update_talr_additive(st(0.0001), 0.0, 0.01).talr, 0.0);
}

TEST(Multiplicative, Examples) {
  auto s = st(0.1, 0, TalrRule::multiplicative);
  EXPECT_EQ(update_talr_multiplicative(s, 0.02, 0.02).talr, 0.1);
  EXPECT_NEAR(update_talr_multiplicative(s, 0.01, 0.005).talr, 0.2, 1e-12);
  EXPECT_EQ(update_talr_multiplicative(s, 0.0, 0.005).talr, 0.0);
}

TEST(Multiplicative, ZeroRunningTrSkipsAndCounts) {
  auto s = update_talr_multiplicative(st(0.1, 0, TalrRule::multiplicative), 0.01, 0.0);
  EXPECT_EQ(s.talr, 0.1);
  EXPECT_EQ(s.skipped_updates, 1);
}

TEST(Momentum, Examples) {
  EXPECT_NEAR(update_talr_momentum(st(0.1, 0, TalrRule::momentum, 0.99), 0.01, 0.005).talr, 0.101, 1e-12);
  EXPECT_EQ(update_talr_momentum(st(0.1, 0, TalrRule::momentum), 0.03, 0.03).talr, 0.1);
  EXPECT_EQ(update_talr_momentum(st(0.1, 0, TalrRule::momentum, 0.0), 0.01, 0.005).talr,
            update_talr_multiplicative(st(0.1), 0.01, 0.005).talr);
  EXPECT_ANY_THROW(update_talr_momentum(st(0.1, 0, TalrRule::momentum, 1.0), 0.01, 0.005));
}

TEST(ControlDirection, AllRules) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(1e-4, 0.1);
  for (auto rule : {TalrRule::additive, TalrRule::multiplicative, TalrRule::momentum}) {
    for (int i = 0; i < 2000; ++i) {
      const double U = u(rng), R = u(rng), K = u(rng);
      const double next = update_talr(st(U, 0.1, rule, 0.9), R, K).talr;
      if (K < R) {
        EXPECT_GE(next, U);
      } else if (K > R) {
        EXPECT_LE(next, U);
      }
      EXPECT_GE(next, 0.0);
    }
  }
}

TEST(TrController, RunningTrStartsAtZero) {
  TrController c(st(0.1), 0.99);
  const double U = c.observe(0.01, 0.02);
  EXPECT_NEAR(c.running_tr(), 1e-4, 1e-18);
  EXPECT_NEAR(U, 0.1 + 0.1 * (0.02 - 1e-4), 1e-15);
}

TEST(TrController, RejectsBadState) {
  EXPECT_ANY_THROW(TrController(st(0.1), 1.0));
  EXPECT_ANY_THROW(TrController(st(-0.1), 0.9));
}

TEST(ParseRule, KnownAndUnknown) {
  EXPECT_EQ(parse_talr_rule("momentum"), TalrRule::momentum);
  EXPECT_ANY_THROW(parse_talr_rule("pid"));
  EXPECT_EQ(parse_schedule_kind("step"), ScheduleKind::step);
  EXPECT_ANY_THROW(parse_schedule_kind("exp"));
}
