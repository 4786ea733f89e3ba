#include "warmup/schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace warmup;

TEST(LinearWarmup, Midpoint) { EXPECT_DOUBLE_EQ(lr_at(ScheduleSpec::linear_warmup(0, 0.8, 4), 2), 0.4); }

TEST(LinearWarmup, ReachesTargetExactlyAndClamps)
{
    const auto s = ScheduleSpec::linear_warmup(0.0, 0.3, 7);
    EXPECT_EQ(lr_at(s, 7), 0.3);
    EXPECT_EQ(lr_at(s, 8), 0.3);
    EXPECT_EQ(lr_at(s, 100000), 0.3);
    EXPECT_EQ(lr_at(s, 0), 0.0);
}

TEST(LinearWarmup, SingleStepIsConstant)
{
    const auto s = ScheduleSpec::linear_warmup(0.0, 0.25, 1);
    for (std::int64_t t = 1; t < 10; ++t) EXPECT_EQ(lr_at(s, t), 0.25);
}

TEST(LinearWarmup, RateIsExposed)
{
    EXPECT_DOUBLE_EQ(ScheduleSpec::linear_warmup(0.1, 0.5, 8).warmup_rate(), 0.05);
}

TEST(Cosine, Midpoint)
{
    EXPECT_NEAR(lr_at(ScheduleSpec::cosine(1.0, 100, 0.1, 1.0), 50), 0.55, 1e-15);
}

TEST(Cosine, EndsAtMinimumExactly)
{
    const auto s = ScheduleSpec::cosine(1.0, 100, 0.1, 1.0);
    EXPECT_EQ(lr_at(s, 100), 0.1);
    EXPECT_EQ(lr_at(s, 250), 0.1);
    EXPECT_EQ(lr_at(s, 0), 1.0);
}

TEST(Cosine, DefaultsAndRhoZero)
{
    const auto s = ScheduleSpec::cosine(0.5, 10);
    EXPECT_DOUBLE_EQ(s.eta_min, 0.05);
    EXPECT_EQ(s.rho, 1.0);
    const auto flat = ScheduleSpec::cosine(0.5, 10, 0.05, 0.0);
    for (std::int64_t t = 0; t < 30; ++t) EXPECT_EQ(lr_at(flat, t), 0.5);
}

TEST(Cosine, LargerRhoDecaysFaster)
{
    const auto slow = ScheduleSpec::cosine(1.0, 100, 0.0, 1.0);
    const auto fast = ScheduleSpec::cosine(1.0, 100, 0.0, 3.0);
    for (std::int64_t t = 1; t < 100; ++t) EXPECT_LT(lr_at(fast, t), lr_at(slow, t));
}

TEST(WarmupThenCosine, ContinuousAndMonotone)
{
    const auto s = ScheduleSpec::warmup_then_cosine(0.0, 1.0, 16, 100);
    double prev = -1.0;
    for (std::int64_t t = 0; t <= 16; ++t) {
        EXPECT_GE(lr_at(s, t), prev);
        prev = lr_at(s, t);
    }
    EXPECT_EQ(lr_at(s, 16), 1.0);
    EXPECT_NEAR(lr_at(s, 17), 1.0, 1e-3);
    EXPECT_NEAR(lr_at(s, 116), 0.1, 1e-15);
}

TEST(GiImplicit, MatchesClosedForm)
{
    const auto s = ScheduleSpec::gi_implicit(0.001, 0.999);
    EXPECT_EQ(lr_at(s, 0), 0.0);
    EXPECT_NEAR(lr_at(s, 1), 3.1623e-5, 1e-9);
    EXPECT_NEAR(lr_at(s, 100000), 0.001, 1e-15);
}

TEST(Schedule, BoundedByEndpoints)
{
    const std::vector<ScheduleSpec> specs = {
        ScheduleSpec::constant(0.2),
        ScheduleSpec::linear_warmup(0.05, 0.2, 33),
        ScheduleSpec::linear_warmup(0.4, 0.2, 5),
        ScheduleSpec::cosine(0.2, 50),
        ScheduleSpec::warmup_then_cosine(0.0, 0.2, 10, 40, 0.0, 2.0),
        ScheduleSpec::gi_implicit(0.2, 0.99),
        offset_warmup(0.07, 0.2, 64),
    };
    for (const auto& s : specs)
        for (std::int64_t t = 0; t < 200; ++t) {
            const double eta = lr_at(s, t);
            EXPECT_GE(eta, 0.0);
            EXPECT_LE(eta, std::max(s.eta_trgt, s.eta_init));
        }
}

TEST(Schedule, Validation)
{
    EXPECT_THROW(ScheduleSpec::linear_warmup(0, 0.1, 0), std::invalid_argument);
    EXPECT_THROW(ScheduleSpec::linear_warmup(-1, 0.1, 3), std::invalid_argument);
    EXPECT_THROW(ScheduleSpec::cosine(1.0, 0), std::invalid_argument);
    EXPECT_THROW(ScheduleSpec::cosine(1.0, 10, 0.1, -1.0), std::invalid_argument);
    EXPECT_THROW(lr_at(ScheduleSpec::constant(1.0), -1), std::invalid_argument);
    EXPECT_EQ(schedule_from_string("warmup-cosine"), ScheduleKind::WARMUP_THEN_COSINE);
    EXPECT_THROW(schedule_from_string("step"), std::invalid_argument);
}

TEST(OffsetWarmup, ReachStep)
{
    const auto s = offset_warmup(0.1, 0.4, 1000);
    EXPECT_EQ(s.reach_step(), 750);
    EXPECT_LT(lr_at(s, 749), 0.4);
    EXPECT_EQ(lr_at(s, 750), 0.4);
    EXPECT_DOUBLE_EQ(s.warmup_rate(), 0.4 / 1000);
    EXPECT_DOUBLE_EQ(lr_at(s, 1), 0.1 + 0.4 / 1000);
}

TEST(OffsetWarmup, AboveTargetReachesInOneStep)
{
    const auto s = offset_warmup(0.5, 0.4, 1000);
    EXPECT_EQ(s.reach_step(), 1);
    EXPECT_EQ(lr_at(s, 1), 0.4);
}

TEST(OffsetWarmup, ZeroOffsetIsPlainWarmup)
{
    const auto s = offset_warmup(0.0, 0.4, 100);
    const auto plain = ScheduleSpec::linear_warmup(0.0, 0.4, 100);
    EXPECT_EQ(s.reach_step(), 100);
    for (std::int64_t t = 0; t <= 150; ++t) EXPECT_DOUBLE_EQ(lr_at(s, t), lr_at(plain, t));
}

TEST(OffsetWarmup, Errors)
{
    EXPECT_THROW(offset_warmup(0.1, 0.0, 10), std::invalid_argument);
    EXPECT_THROW(offset_warmup(-0.1, 1.0, 10), std::invalid_argument);
}
