#include <cmath>
#include <memory>
#include <random>

#include <gtest/gtest.h>

#include "drcusum/detector.hpp"
#include "drcusum/error.hpp"
#include "drcusum/lfd.hpp"
#include "drcusum/rng.hpp"

using namespace drcusum;

namespace {

// llr(x) = slope * x[0] + offset
class AffineScorer final : public LlrScorer {
public:
    AffineScorer(double slope, double offset) : slope_(slope), offset_(offset) {}
    double llr(ObsView x) const override { return slope_ * x[0] + offset_; }
    std::size_t dim() const override { return 1; }

private:
    double slope_, offset_;
};

std::shared_ptr<const LlrScorer> affine(double slope, double offset) {
    return std::make_shared<AffineScorer>(slope, offset);
}

std::vector<Observation> stream_of(std::initializer_list<double> xs) {
    std::vector<Observation> out;
    for (double x : xs) out.push_back(Observation{x});
    return out;
}

std::vector<Observation> gaussian_stream(std::uint64_t seed, std::size_t n, double mu) {
    Rng rng = make_rng(seed);
    std::normal_distribution<double> nd(mu, 1.0);
    std::vector<Observation> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(Observation{nd(rng)});
    return out;
}

std::optional<std::size_t> stop_time(const std::vector<ScenarioScorer>& sc, double b, const std::vector<Observation>& xs) {
    VectorSource src(xs);
    const auto r = run_stream(sc, b, src, xs.size() + 1);
    if (r.outcome != StreamOutcome::Stopped) return std::nullopt;
    return r.steps;
}

}  // namespace

TEST(CusumStep, Examples) {
    EXPECT_EQ(cusum_step(0.0, -1.0), -1.0);
    EXPECT_EQ(cusum_step(-1.0, 0.5), 0.5);
    EXPECT_EQ(cusum_step(3.0, 2.0), 5.0);
    EXPECT_THROW(cusum_step(0.0, NAN), Error);
    EXPECT_THROW(cusum_step(0.0, -INFINITY), Error);
}

TEST(Threshold, GammaRuleIsLogMGamma) {
    EXPECT_NEAR(threshold_for_mtfa(100.0, 1), 4.6052, 1e-4);
    EXPECT_NEAR(threshold_for_mtfa(100.0, 5), 6.2146, 1e-4);
    EXPECT_DOUBLE_EQ(threshold_for_mtfa(100.0, 2), std::log(200.0));
    for (double b : {2.0, 4.5, 7.0}) {
        for (std::size_t m : {1u, 2u, 5u}) EXPECT_NEAR(threshold_for_mtfa(std::exp(b) / m, m), b, 1e-12);
    }
    EXPECT_THROW(threshold_for_mtfa(1.0, 1), Error);
    EXPECT_THROW(threshold_for_mtfa(100.0, 0), Error);
}

TEST(Advance, ImmediateCrossing) {
    const auto sc = make_scenarios({affine(1.0, 0.0)});
    DetectorState st(1, 0.0);
    st = advance(st, std::vector<double>{0.5}, sc);
    ASSERT_TRUE(st.stopped());
    EXPECT_EQ(*st.stopped_at(), 1u);
    EXPECT_EQ(*st.argmax_scenario(), 1u);
}

TEST(Advance, DuplicateScenariosTieToLowest) {
    const auto s = affine(1.0, 0.2);
    const auto sc = make_scenarios({s, s});
    DetectorState st(2, 3.0);
    for (double x : {0.5, 1.0, 2.0}) st.advance(std::vector<double>{x}, sc);
    EXPECT_EQ(st.stat(0), st.stat(1));
    ASSERT_TRUE(st.stopped());
    EXPECT_EQ(*st.argmax_scenario(), 1u);
}

TEST(Advance, ArgmaxPicksLargerStatistic) {
    const auto sc = make_scenarios({affine(1.0, 0.0), affine(2.0, 0.0)});
    DetectorState st(2, 3.0);
    st.advance(std::vector<double>{1.0}, sc);
    st.advance(std::vector<double>{1.0}, sc);
    ASSERT_TRUE(st.stopped());
    EXPECT_EQ(*st.stopped_at(), 2u);
    EXPECT_EQ(*st.argmax_scenario(), 2u);
}

TEST(Advance, DeterministicRamp) {
    for (double c : {0.3, 1.0, 2.5}) {
        for (double b : {1.0, 4.0, 7.3}) {
            const auto sc = make_scenarios({affine(0.0, c)});
            std::vector<Observation> xs(100, Observation{0.0});
            EXPECT_EQ(stop_time(sc, b, xs), static_cast<std::size_t>(std::ceil(b / c)));
        }
    }
}

TEST(Advance, StateFrozenAfterStop) {
    const auto sc = make_scenarios({affine(1.0, 0.0)});
    DetectorState st(1, 1.0);
    st.advance(std::vector<double>{2.0}, sc);
    const double s = st.stat(0);
    EXPECT_THROW(st.advance(std::vector<double>{5.0}, sc), Error);
    EXPECT_EQ(st.stat(0), s);
    EXPECT_EQ(st.step(), 1u);
}

TEST(Advance, RejectsDimensionMismatch) {
    const auto sc = make_scenarios({affine(1.0, 0.0)});
    DetectorState st(1, 1.0);
    EXPECT_THROW(st.advance(std::vector<double>{1.0, 2.0}, sc), Error);
    EXPECT_THROW(DetectorState(0, 1.0), Error);
}

TEST(RunStream, ZeroLlrCensoredAtCap) {
    const auto sc = make_scenarios({affine(0.0, 0.0)});
    std::vector<Observation> xs(500, Observation{1.0});
    VectorSource src(xs);
    const auto r = run_stream(sc, 2.0, src, 100);
    EXPECT_EQ(r.outcome, StreamOutcome::Censored);
    EXPECT_EQ(r.steps, 100u);
    EXPECT_FALSE(r.argmax_scenario);
}

TEST(RunStream, ExhaustedAndRamp) {
    const auto sc = make_scenarios({affine(0.0, 1.0)});
    VectorSource short_src(stream_of({0.0, 0.0}));
    EXPECT_EQ(run_stream(sc, 5.0, short_src, 100).outcome, StreamOutcome::Exhausted);
    VectorSource src(std::vector<Observation>(20, Observation{0.0}));
    const auto r = run_stream(sc, 5.0, src, 100);
    EXPECT_EQ(r.outcome, StreamOutcome::Stopped);
    EXPECT_EQ(r.steps, 5u);
    EXPECT_EQ(r.final_stats, std::vector<double>{5.0});
}

TEST(Properties, MonotoneInThreshold) {
    const auto sc = make_scenarios({affine(0.5, -0.125)});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto xs = gaussian_stream(seed, 3000, 0.5);
        std::size_t prev = 0;
        for (double b : {0.5, 1.0, 2.0, 3.0, 4.0, 6.0}) {
            const auto t = stop_time(sc, b, xs);
            ASSERT_TRUE(t.has_value());
            EXPECT_GE(*t, prev);
            prev = *t;
        }
    }
}

TEST(Properties, ScenarioMaxStopsNoLater) {
    const auto s1 = affine(0.5, -0.125);
    const auto s2 = affine(-0.5, -0.125);
    const auto both = make_scenarios({s1, s2});
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto xs = gaussian_stream(100 + seed, 4000, seed % 2 ? 0.5 : -0.5);
        const auto tm = stop_time(both, 4.0, xs);
        for (const auto& single : {make_scenarios({s1}), make_scenarios({s2})}) {
            const auto ts = stop_time(single, 4.0, xs);
            if (ts) {
                ASSERT_TRUE(tm.has_value());
                EXPECT_LE(*tm, *ts);
            }
        }
    }
}

TEST(Properties, StateDependsOnlyOnPrefix) {
    const auto sc = make_scenarios({affine(0.5, -0.125), affine(1.0, -0.5)});
    const auto xs = gaussian_stream(7, 200, 0.0);
    DetectorState a(2, 1e9), b(2, 1e9);
    for (std::size_t k = 0; k < 100; ++k) a.advance(xs[k].view(), sc);
    auto ys = xs;
    for (std::size_t k = 100; k < ys.size(); ++k) ys[k] = Observation{50.0};
    for (std::size_t k = 0; k < 100; ++k) b.advance(ys[k].view(), sc);
    EXPECT_EQ(a.stats(), b.stats());
}

TEST(Properties, StopFractionGrowsWithTime) {
    const auto lfd = std::make_shared<const LfdScorer>(
        LfdScorer::fit(PreChangeModel::gaussian(0.0, 1.0), EmpiricalDistribution(std::vector<std::vector<double>>{{0.5}, {1.0}}),
                       CostMetric(2.0), 0.3));
    const auto sc = make_scenarios({lfd});
    std::vector<std::size_t> times;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        VectorSource src(gaussian_stream(seed, 400, 0.0));
        const auto r = run_stream(sc, 4.0, src, 400);
        times.push_back(r.outcome == StreamOutcome::Stopped ? r.steps : 401);
    }
    std::size_t prev = 0;
    for (std::size_t t : {10u, 50u, 100u, 200u, 400u}) {
        const auto n = static_cast<std::size_t>(std::count_if(times.begin(), times.end(), [&](std::size_t s) { return s <= t; }));
        EXPECT_GE(n, prev);
        prev = n;
    }
    EXPECT_GT(prev, 0u);
}

TEST(CusumStatisticTest, MatchesDetectorState) {
    const std::vector<std::shared_ptr<const LlrScorer>> scorers{affine(0.5, -0.125), affine(-0.3, 0.1)};
    const auto sc = make_scenarios(scorers);
    CusumStatistic stat(scorers);
    DetectorState st(2, 1e9);
    for (const auto& x : gaussian_stream(5, 300, 0.2)) {
        const double v = stat.update(x.view());
        st.advance(x.view(), sc);
        EXPECT_EQ(v, st.max_stat());
    }
    stat.reset();
    EXPECT_NEAR(stat.update(std::vector<double>{0.25}), 0.025, 1e-15);
}
