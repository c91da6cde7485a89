#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "stepscat/errors.hpp"
#include "stepscat/potential.hpp"

using namespace stepscat;

TEST(Potential, AsymptotesAndSpectralEdges) {
    const Potential p = Potential::step(3.0, -1.0);
    EXPECT_EQ(p.eval(-5.0), 3.0);
    EXPECT_EQ(p.eval(0.0), -1.0);
    EXPECT_EQ(p.mu1(), -1.0);
    EXPECT_EQ(p.mu2(), 3.0);
    EXPECT_FALSE(p.has_deviation());
}

TEST(Potential, SquareIsHalfOpen) {
    const Potential p(0.0, 2.0, deviation::Square{0.0, 1.0, -8.0});
    EXPECT_EQ(p.eval(-1e-12), 0.0);
    EXPECT_EQ(p.eval(0.0), -6.0);
    EXPECT_EQ(p.eval(0.999), -6.0);
    EXPECT_EQ(p.eval(1.0), 2.0);
    const Interval s = p.support();
    EXPECT_EQ(s.lo, 0.0);
    EXPECT_EQ(s.hi, 1.0);
    EXPECT_TRUE(p.compact());
}

TEST(Potential, GaussianProfile) {
    const Potential p(0.0, 2.0, deviation::Gaussian{-3.0, 0.5, 1.0});
    EXPECT_DOUBLE_EQ(p.deviation_at(0.5), -3.0);
    EXPECT_NEAR(p.deviation_at(1.5), -3.0 * std::exp(-0.5), 1e-15);
    EXPECT_NEAR(p.eval(-0.5), -3.0 * std::exp(-0.5), 1e-15);
    const Interval s = p.support();
    EXPECT_LT(std::abs(p.deviation_at(s.hi)), 2e-18);
    EXPECT_FALSE(p.compact());
}

TEST(Potential, TabulatedInterpolatesAndVanishesOutside) {
    const Potential p(1.0, 1.0, deviation::Tabulated{{-1.0, 0.0, 2.0}, {0.0, 4.0, 0.0}});
    EXPECT_DOUBLE_EQ(p.deviation_at(-0.5), 2.0);
    EXPECT_DOUBLE_EQ(p.deviation_at(1.0), 2.0);
    EXPECT_EQ(p.deviation_at(-2.0), 0.0);
    EXPECT_EQ(p.deviation_at(3.0), 0.0);
}

TEST(Potential, RejectsMalformedProfiles) {
    EXPECT_THROW(Potential(0.0, 0.0, deviation::Square{0.0, 0.0, 1.0}), InvalidInput);
    EXPECT_THROW(Potential(0.0, 0.0, deviation::Gaussian{1.0, 0.0, -1.0}), InvalidInput);
    EXPECT_THROW(Potential(0.0, 0.0, deviation::Tabulated{{0.0, 0.0}, {1.0, 1.0}}), InvalidInput);
    EXPECT_THROW(Potential(0.0, 0.0, deviation::Tabulated{{0.0}, {1.0}}), InvalidInput);
    EXPECT_THROW(Potential(std::numeric_limits<double>::infinity(), 0.0), InvalidInput);
}

TEST(Potential, BreakpointsSortedAndContainOrigin) {
    const Potential p(0.0, 2.0, deviation::Square{-2.0, 1.5, 1.0});
    const std::vector<double> b = p.breakpoints();
    ASSERT_FALSE(b.empty());
    EXPECT_TRUE(std::is_sorted(b.begin(), b.end()));
    EXPECT_NE(std::find(b.begin(), b.end(), 0.0), b.end());
    EXPECT_NE(std::find(b.begin(), b.end(), -2.0), b.end());
    EXPECT_NE(std::find(b.begin(), b.end(), -0.5), b.end());
}

TEST(Potential, NonDecayingTailIsRejected) {
    const Potential p(0.0, 0.0, deviation::ExpTail{1.0, 0.0});
    EXPECT_THROW(p.finite_support(), NonIntegrableDeviation);
    const std::vector<double> probes;
    MomentOptions o;
    o.tail_bound = 100.0;
    EXPECT_THROW(moment_report(p, probes, o), NonIntegrableDeviation);
}

TEST(Potential, LowerBoundSeesTheWell) {
    const Potential p(0.0, 2.0, deviation::Square{0.0, 1.0, -8.0});
    EXPECT_DOUBLE_EQ(p.lower_bound(), -6.0);
}

TEST(Moments, SquareWellClosedForms) {
    const Potential p(0.0, 2.0, deviation::Square{0.0, 1.0, -8.0});
    // |q - a+| is 2 on [x, 0) and 8 on [0, 1).
    EXPECT_NEAR(h_plus(p, -1.0), 10.0, 1e-10);
    EXPECT_NEAR(h_plus(p, 0.5), 4.0, 1e-10);
    EXPECT_EQ(h_plus(p, 1.5), 0.0);
    EXPECT_NEAR(h1_plus(p, 0.5), 1.0, 1e-10);
    EXPECT_NEAR(h1_plus(p, -1.0), 2.0 * 0.5 + 8.0 * 1.5, 1e-10);

    const std::vector<double> probes{0.25};
    const MomentReport r = moment_report(p, probes);
    EXPECT_NEAR(r.m1, 8.0, 1e-10);
    EXPECT_NEAR(r.m2, 8.0 * 1.5, 1e-10);
    ASSERT_EQ(r.h_plus_at.size(), 1u);
    EXPECT_NEAR(r.h_plus_at[0].second, 6.0, 1e-10);
}

TEST(Moments, ExpTailClosedForm) {
    const Potential p(0.0, 0.0, deviation::ExpTail{2.0, 0.5});
    const std::vector<double> probes;
    const MomentReport r = moment_report(p, probes);
    // int 2 e^{-|x|/2} = 8, int (1 + |x|) 2 e^{-|x|/2} = 8 + 16.
    EXPECT_NEAR(r.m1, 8.0, 1e-8);
    EXPECT_NEAR(r.m2, 24.0, 1e-8);
}

TEST(Potential, StepReferenceDropsDeviation) {
    const Potential p(1.0, 4.0, deviation::Gaussian{2.0, 0.0, 1.0});
    const Potential s = step_reference(p);
    EXPECT_EQ(s.a_minus(), 1.0);
    EXPECT_EQ(s.a_plus(), 4.0);
    EXPECT_FALSE(s.has_deviation());
}
