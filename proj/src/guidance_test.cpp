#include "rectflow/guidance.hpp"

#include <cmath>

#include <gtest/gtest.h>

namespace rectflow {
namespace {

// Conditional branch pulls toward m_y with a time-dependent rate; the null
// branch decays toward the origin. Simple enough to work out steps by hand.
const FunctionField kField(2, [](const Vec& x, double t, Condition c) {
    if (c.is_null()) return -1.0 * x;
    const Vec target{static_cast<double>(c.label()) + 1.0, -1.0};
    return (1.0 + t) * (target - x);
});

TEST(AlphaSchedule, PowerLaw)
{
    EXPECT_DOUBLE_EQ(alpha_schedule(0.0, 0.8, 2.0), 0.8);
    EXPECT_DOUBLE_EQ(alpha_schedule(1.0, 0.8, 2.0), 0.0);
    EXPECT_DOUBLE_EQ(alpha_schedule(0.5, 0.8, 2.0), 0.2);
    // gamma = 0 is constant, including 0^0 at t = 1
    EXPECT_DOUBLE_EQ(alpha_schedule(1.0, 0.8, 0.0), 0.8);
    EXPECT_THROW(alpha_schedule(1.2, 0.8, 1.0), RangeError);
}

TEST(AlphaSchedule, ConstantAndTable)
{
    const AlphaSchedule constant(AlphaSchedule::Constant{0.3});
    EXPECT_EQ(constant(0.7), 0.3);
    EXPECT_EQ(constant.integral(), 0.3);

    const AlphaSchedule table(AlphaSchedule::Table{{{0.2, 1.0}, {0.6, 0.0}}});
    EXPECT_EQ(table(0.0), 1.0);
    EXPECT_EQ(table(1.0), 0.0);
    EXPECT_DOUBLE_EQ(table(0.4), 0.5);
    EXPECT_DOUBLE_EQ(table.integral(), 0.2 + 0.2);
}

TEST(AlphaSchedule, Validation)
{
    EXPECT_THROW(AlphaSchedule(AlphaSchedule::Power{-1.0, 1.0}), ConfigError);
    EXPECT_THROW(AlphaSchedule(AlphaSchedule::Power{1.0, -0.5}), ConfigError);
    EXPECT_THROW(AlphaSchedule(AlphaSchedule::Table{{{0.5, 1.0}, {0.5, 2.0}}}), ConfigError);
    EXPECT_THROW(AlphaSchedule(AlphaSchedule::Table{}), ConfigError);
}

TEST(AlphaSchedule, PowerIntegralClosedForm)
{
    for (double gamma : {0.0, 1.0, 2.0, 3.0}) {
        EXPECT_DOUBLE_EQ(AlphaSchedule(AlphaSchedule::Power{1.2, gamma}).integral(), 1.2 / (gamma + 1.0));
    }
}

TEST(Cfg, UnitScaleIsConditionalBitForBit)
{
    const Vec x{0.3, 0.9};
    const auto g = cfg_velocity(kField, x, 0.6, 0.1, Condition::label(1), 1.0);
    EXPECT_EQ(g.velocity, kField.velocity(x, 0.6, Condition::label(1)));
    EXPECT_EQ(g.diagnostics.deviation_from_conditional, 0.0);
    EXPECT_EQ(g.diagnostics.nfe, 2u);
}

TEST(Cfg, ZeroScaleIsUnconditional)
{
    const Vec x{0.3, 0.9};
    EXPECT_EQ(cfg_velocity(kField, x, 0.6, 0.1, Condition::label(1), 0.0).velocity, (Vec{-0.3, -0.9}));
}

TEST(Cfg, Extrapolation)
{
    const Vec x{0.0, 0.0};
    // v_c = 1.5 * (2, -1) = (3, -1.5); v_u = 0
    const auto g = cfg_velocity(kField, x, 0.5, 0.1, Condition::label(1), 3.0);
    EXPECT_EQ(g.velocity, (Vec{9.0, -4.5}));
    EXPECT_DOUBLE_EQ(g.diagnostics.alpha, 2.0);
    EXPECT_NEAR(g.diagnostics.deviation_from_conditional, 0.1 * 2.0 * std::hypot(3.0, 1.5), 1e-15);
}

TEST(RectCfgPP, HandWorkedStep)
{
    const Vec x{0.5, 0.5};
    const double t = 0.8;
    const double dt = 0.2;
    const Condition y = Condition::label(0);
    RngStream rng(1, 0);
    const auto g = rect_cfgpp_velocity(kField, x, t, dt, y, guidance::RectCfgPP(1.0, 1.0), rng);

    // v_c = 1.8 * ((1, -1) - x) = (0.9, -2.7)
    // x~ = x + 0.1 v_c = (0.59, 0.23), t_mid = 0.7
    // dv = 1.7 * ((1, -1) - x~) + x~ = (0.697 + 0.59, -2.091 + 0.23)
    // alpha(0.8) = 0.2
    const Vec vc{0.9, -2.7};
    const Vec dv{1.7 * (1.0 - 0.59) + 0.59, 1.7 * (-1.0 - 0.23) + 0.23};
    EXPECT_NEAR(g.velocity[0], vc[0] + 0.2 * dv[0], 1e-14);
    EXPECT_NEAR(g.velocity[1], vc[1] + 0.2 * dv[1], 1e-14);
    EXPECT_NEAR(g.diagnostics.alpha, 0.2, 1e-15);
    EXPECT_NEAR(g.diagnostics.dv_norm, l2_norm(dv), 1e-14);
    EXPECT_EQ(g.diagnostics.nfe, 3u);
}

TEST(RectCfgPP, DeviationEqualsScaledGuidanceDifference)
{
    RngStream rng(3, 0);
    RngStream probe(4, 0);
    for (int i = 0; i < 200; ++i) {
        const Vec x = sample_standard_normal(probe, 2);
        const double dt = 1.0 / 28.0;
        const double t = dt * (1 + static_cast<int>(probe.uniform() * 27.0));
        const auto g = rect_cfgpp_velocity(kField, x, t, dt, Condition::label(i % 3),
                                           guidance::RectCfgPP(1.0, 1.0), rng);
        const double predicted = dt * g.diagnostics.alpha * g.diagnostics.dv_norm;
        if (predicted > 0.0) {
            EXPECT_LE(std::abs(g.diagnostics.deviation_from_conditional - predicted) / predicted, 1e-12);
        }
    }
}

TEST(RectCfgPP, ZeroStrengthIsConditionalBitForBit)
{
    RngStream rng(1, 0);
    const Vec x{-0.4, 1.3};
    const auto g = rect_cfgpp_velocity(kField, x, 0.5, 0.1, Condition::label(2), guidance::RectCfgPP(0.0, 1.0), rng);
    EXPECT_EQ(g.velocity, kField.velocity(x, 0.5, Condition::label(2)));
    EXPECT_EQ(g.diagnostics.deviation_from_conditional, 0.0);
}

TEST(RectCfgPP, RejectsBadStep)
{
    RngStream rng(1, 0);
    const guidance::RectCfgPP params(1.0, 1.0);
    EXPECT_THROW(rect_cfgpp_velocity(kField, Vec{0.0, 0.0}, 0.5, 0.0, Condition::label(0), params, rng),
                 ScheduleError);
    EXPECT_THROW(rect_cfgpp_velocity(kField, Vec{0.0, 0.0}, 0.05, 0.2, Condition::label(0), params, rng),
                 ScheduleError);
}

TEST(RectCfgPP, PredictorNoiseIsReproducible)
{
    const guidance::RectCfgPP params(1.0, 1.0, 0.1);
    RngStream a(5, 1);
    RngStream b(5, 1);
    const Vec x{0.2, 0.2};
    const auto ga = rect_cfgpp_velocity(kField, x, 0.5, 0.1, Condition::label(0), params, a);
    const auto gb = rect_cfgpp_velocity(kField, x, 0.5, 0.1, Condition::label(0), params, b);
    EXPECT_EQ(ga.velocity, gb.velocity);
    RngStream c(5, 1);
    const auto g0 = rect_cfgpp_velocity(kField, x, 0.5, 0.1, Condition::label(0), guidance::RectCfgPP(1.0, 1.0), c);
    EXPECT_NE(ga.velocity, g0.velocity);
}

TEST(Apg, RemovesParallelComponent)
{
    // v_u = 0 makes v_c - v_u parallel to v_c, so nothing survives projection
    std::optional<Vec> momentum;
    const Vec x{0.0, 0.0};
    const auto g = apg_velocity(kField, x, 0.5, 0.1, Condition::label(0), guidance::Apg{2.0, 10.0, 0.0}, momentum);
    const Vec vc = kField.velocity(x, 0.5, Condition::label(0));
    EXPECT_NEAR(distance(g.velocity, vc), 0.0, 1e-14);
}

TEST(Apg, SaturatesAndUsesMomentum)
{
    const FunctionField field(2, [](const Vec&, double, Condition c) {
        return c.is_null() ? Vec{0.0, -4.0} : Vec{1.0, 0.0};
    });
    std::optional<Vec> momentum;
    const auto g = apg_velocity(field, Vec{0.0, 0.0}, 0.5, 0.1, Condition::label(0), guidance::Apg{0.5, 1.0, 0.5},
                                momentum);
    // momentum after one step: 0.5 * (1, 4) = (0.5, 2) -> orth (0, 2) -> clipped (0, 1)
    EXPECT_NEAR(g.velocity[0], 1.0, 1e-15);
    EXPECT_NEAR(g.velocity[1], 0.5, 1e-15);
    ASSERT_TRUE(momentum.has_value());
    EXPECT_EQ(*momentum, (Vec{0.5, 2.0}));
}

TEST(CfgZeroStar, ProjectionScaleAndZeroInit)
{
    const FunctionField field(2, [](const Vec&, double, Condition c) {
        return c.is_null() ? Vec{2.0, 0.0} : Vec{1.0, 1.0};
    });
    // s* = <(1,1),(2,0)> / 4 = 0.5 -> (1 - w) * 0.5 * (2, 0) + w (1, 1)
    const auto g = cfg_zero_star_velocity(field, Vec{0.0, 0.0}, 0.5, 0.1, Condition::label(0),
                                          guidance::CfgZeroStar{3.0, 1}, 1);
    EXPECT_EQ(g.velocity, (Vec{-2.0 + 3.0, 3.0}));
    EXPECT_EQ(g.diagnostics.nfe, 2u);
    const auto zero = cfg_zero_star_velocity(field, Vec{0.0, 0.0}, 0.5, 0.1, Condition::label(0),
                                             guidance::CfgZeroStar{3.0, 1}, 0);
    EXPECT_EQ(zero.velocity, (Vec{0.0, 0.0}));
}

TEST(CfgZeroStar, VanishingUnconditionalGivesZeroScale)
{
    const FunctionField field(2, [](const Vec&, double, Condition c) {
        return c.is_null() ? Vec{0.0, 0.0} : Vec{1.0, 1.0};
    });
    const auto g = cfg_zero_star_velocity(field, Vec{0.0, 0.0}, 0.5, 0.1, Condition::label(0),
                                          guidance::CfgZeroStar{2.0, 0}, 0);
    EXPECT_EQ(g.velocity, (Vec{2.0, 2.0}));
}

TEST(Strategy, NamesAndCosts)
{
    const std::vector<GuidanceStrategy> all{guidance::None{}, guidance::Cfg{2.0}, guidance::RectCfgPP(1.0, 1.0),
                                            guidance::Apg{1.0, 1.0, 0.5}, guidance::CfgZeroStar{2.0, 0}};
    const std::vector<std::string> names{"none", "cfg", "rect_cfgpp", "apg", "cfg_zero_star"};
    const std::vector<std::size_t> costs{1, 2, 3, 2, 2};
    for (std::size_t i = 0; i < all.size(); ++i) {
        EXPECT_EQ(strategy_name(all[i]), names[i]);
        EXPECT_EQ(nfe_per_step(all[i]), costs[i]);
        EXPECT_NO_THROW(validate(all[i]));
    }
    EXPECT_EQ(strategy_label(guidance::Cfg{3.0}), "cfg(omega=3)");
    EXPECT_THROW(validate(guidance::Apg{1.0, 0.0, 0.5}), ConfigError);
    EXPECT_THROW(validate(guidance::Apg{1.0, 1.0, 1.0}), ConfigError);
}

TEST(Strategy, DispatchCountsEvaluationsAndSteps)
{
    const CountingField counter(kField);
    ChainState state;
    RngStream rng(1, 1);
    const std::vector<GuidanceStrategy> all{guidance::None{}, guidance::Cfg{2.0}, guidance::RectCfgPP(1.0, 1.0),
                                            guidance::Apg{1.0, 1.0, 0.5}, guidance::CfgZeroStar{2.0, 0}};
    for (const auto& s : all) {
        const std::uint64_t before = counter.count();
        const auto g = guided_velocity(counter, s, Vec{0.1, 0.2}, 0.5, 0.1, Condition::label(0), state, rng);
        EXPECT_EQ(counter.count() - before, nfe_per_step(s));
        EXPECT_EQ(g.diagnostics.nfe, nfe_per_step(s));
    }
    EXPECT_EQ(state.step_index, all.size());
}

} // namespace
} // namespace rectflow
