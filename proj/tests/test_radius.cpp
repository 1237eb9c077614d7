#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "drcusum/error.hpp"
#include "drcusum/radius.hpp"
#include "drcusum/rng.hpp"
#include "drcusum/transport.hpp"

using namespace drcusum;

namespace {

const double kInvE = std::exp(-1.0);

EmpiricalDistribution atoms(std::vector<double> xs) {
    std::vector<std::vector<double>> rows;
    for (double x : xs) rows.push_back({x});
    return EmpiricalDistribution(rows);
}

// Exact optimum of a square assignment problem by enumerating permutations.
double brute_assignment(const std::vector<double>& a, const std::vector<double>& b, double s) {
    std::vector<std::size_t> perm(a.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    double best = INFINITY;
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) c += std::pow(std::abs(a[i] - b[perm[i]]), s);
        best = std::min(best, c / a.size());
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::pow(best, 1.0 / s);
}

}  // namespace

TEST(GammaS, Values) {
    EXPECT_EQ(gamma_s(1.0), 1.0);
    EXPECT_EQ(gamma_s(1.5), 1.0);
    EXPECT_DOUBLE_EQ(gamma_s(2.0), 3.0 - 2.0 * std::sqrt(2.0));
    EXPECT_NEAR(gamma_s(2.0), 0.17157, 1e-5);
    EXPECT_THROW(gamma_s(0.5), Error);
    EXPECT_THROW(gamma_s(2.5), Error);
}

TEST(TsConstant, Families) {
    const auto std_normal = ts_constant(PreChangeModel::gaussian(0.0, 1.0));
    EXPECT_EQ(std_normal.c, 1.0);
    EXPECT_EQ(std_normal.source, TransportSource::GaussianT2);
    const auto diag = ts_constant(PreChangeModel(GaussianDiag{{0.0, 0.0}, {1.0, 4.0}}));
    EXPECT_EQ(diag.c, 2.0);
    EXPECT_EQ(diag.source, TransportSource::GaussianDiagT2);
    EXPECT_EQ(hamming_constant().c, 0.25);
    EXPECT_THROW(ts_constant(PreChangeModel(GenericDensity::beta(2, 3))), Error);
    EXPECT_THROW(user_constant(0.0, 1.0), Error);
}

TEST(RadiusBounds, LowerBoundExamples) {
    const auto tc = user_constant(1.0, 1.0);
    EXPECT_NEAR(radius_lower_bound(kInvE, tc, 1.0, 2), 1.0, 1e-15);
    EXPECT_NEAR(radius_lower_bound(kInvE, tc, 2.0, 100), std::sqrt(2.0 / (gamma_s(2.0) * 100)), 1e-15);
    EXPECT_NEAR(radius_lower_bound(kInvE, tc, 2.0, 100), 0.3415, 1e-4);
    EXPECT_NEAR(radius_lower_bound(0.1, tc, 1.0, 40), radius_lower_bound(0.1, tc, 1.0, 10) / 2, 1e-15);
}

TEST(RadiusBounds, UpperBoundExamples) {
    const auto tc = user_constant(1.0, 1.0);
    EXPECT_NEAR(radius_upper_bound(0.5, kInvE, tc, 1.0, 8), 0.0, 1e-15);
    const double lb = radius_lower_bound(0.2, tc, 1.0, 30);
    EXPECT_NEAR(radius_upper_bound(lb, 0.2, tc, 1.0, 30), 0.0, 1e-15);
    EXPECT_NEAR(radius_upper_bound(0.7, 0.2, tc, 1.0, 100000000), 0.7, 1e-3);
}

TEST(RadiusBounds, MinSamples) {
    const auto tc = user_constant(1.0, 1.0);
    EXPECT_NEAR(min_samples(kInvE, tc, 1.0, 1.0), 8.0, 1e-14);
    EXPECT_NEAR(min_samples(0.05, tc, 2.0, 0.4) / min_samples(0.05, tc, 2.0, 1.6), 16.0, 1e-12);
    EXPECT_THROW(min_samples(0.05, tc, 2.0, 0.0), Error);
    // At n = n_min the two bounds coincide.
    const double nmin = 8.0 * std::log(10.0) / gamma_s(2.0);  // delta = 0.1, c = 1, wpq = 1
    EXPECT_NEAR(min_samples(0.1, tc, 2.0, 1.0), nmin, 1e-12);
    const auto n = static_cast<std::size_t>(std::round(min_samples(kInvE, tc, 1.0, 1.0)));
    EXPECT_NEAR(radius_upper_bound(1.0, kInvE, tc, 1.0, n), radius_lower_bound(kInvE, tc, 1.0, n), 1e-12);
}

TEST(RadiusBounds, Monotonicity) {
    const auto tc = user_constant(0.7, 2.0);
    for (std::size_t n = 1; n < 200; n += 7) {
        EXPECT_GT(radius_lower_bound(0.1, tc, 2.0, n), radius_lower_bound(0.1, tc, 2.0, n + 1));
        EXPECT_LT(radius_upper_bound(1.0, 0.1, tc, 2.0, n), radius_upper_bound(1.0, 0.1, tc, 2.0, n + 1));
    }
    for (double d = 0.05; d < 0.9; d += 0.1) EXPECT_GT(radius_lower_bound(d, tc, 2.0, 20), radius_lower_bound(d + 0.05, tc, 2.0, 20));
}

TEST(RadiusBounds, FeasibleIffEnoughSamples) {
    Rng rng = make_rng(4);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const double delta = 0.01 + 0.9 * U(rng);
        const double s = U(rng) < 0.5 ? 1.0 : 2.0;
        const auto tc = user_constant(0.2 + 2 * U(rng), s);
        const double wpq = 0.1 + 2 * U(rng);
        const auto n = static_cast<std::size_t>(1 + 2000 * U(rng));
        const double nmin = min_samples(delta, tc, s, wpq);
        if (std::abs(n - nmin) < 1e-6 * nmin) continue;
        EXPECT_EQ(radius_upper_bound(wpq, delta, tc, s, n) >= radius_lower_bound(delta, tc, s, n), n >= nmin);
    }
}

TEST(WaddBoundTest, Values) {
    const auto tc = user_constant(1.0, 2.0);
    const auto b = wadd_upper_bound(std::exp(10.0), tc, 1.0, 0.0);
    EXPECT_TRUE(b.feasible);
    EXPECT_NEAR(b.value, 20.0, 1e-12);
    const auto inf = wadd_upper_bound(100.0, tc, 1.0, 0.5);
    EXPECT_FALSE(inf.feasible);
    EXPECT_TRUE(std::isinf(inf.value));
    EXPECT_GT(wadd_upper_bound(100.0, tc, 1.0, 0.49).value, 1e3);
}

TEST(WaddBoundTest, DominatesExactDelay) {
    const auto tc = ts_constant(PreChangeModel::gaussian(0.0, 1.0));
    for (double g : {10.0, 100.0, 1e3, 1e5}) {
        EXPECT_GE(wadd_upper_bound(g, tc, 0.5, 0.0).value, std::log(g) / 0.125 * (1 - 1e-12));
        EXPECT_GT(wadd_upper_bound(g, tc, 0.5, 0.1).value, std::log(g) / 0.125);
    }
}

TEST(RadiusReportTest, Flags) {
    const auto tc = user_constant(1.0, 1.0);
    auto ok = radius_report(100, kInvE, tc, 1.0, 1.0, 10.0);
    EXPECT_TRUE(ok.feasible);
    EXPECT_LE(ok.lower, ok.upper);
    auto few = radius_report(4, kInvE, tc, 1.0, 1.0, 10.0);
    EXPECT_FALSE(few.feasible);
    EXPECT_GT(few.lower, few.upper);
    auto capped = radius_report(100, kInvE, tc, 1.0, 1.0, 0.01);
    EXPECT_FALSE(capped.feasible);
    EXPECT_GE(ok.n_min, 0.0);
}

TEST(Transport, DiscreteExamples) {
    const CostMetric m1(1.0);
    EXPECT_NEAR(wasserstein_discrete(atoms({0.0}), atoms({1.0}), m1), 1.0, 1e-15);
    EXPECT_NEAR(wasserstein_discrete(atoms({0.0, 2.0}), atoms({1.0, 3.0}), m1), 1.0, 1e-15);
    EXPECT_NEAR(wasserstein_discrete(atoms({0.3, 2.0, -1.0}), atoms({2.0, -1.0, 0.3}), m1), 0.0, 1e-15);
    EXPECT_EQ(wasserstein_1d_sorted(atoms({0.0, 1.0}), atoms({0.0, 1.0}), 2.0), 0.0);
}

TEST(Transport, SortedMatchingEqualsEnumeration) {
    Rng rng = make_rng(12);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 30; ++rep) {
        const std::size_t n = 1 + rep % 6;
        std::vector<double> a(n), b(n);
        for (auto& x : a) x = nd(rng);
        for (auto& x : b) x = 1 + nd(rng);
        for (double s : {1.0, 2.0}) {
            const double ref = brute_assignment(a, b, s);
            EXPECT_NEAR(wasserstein_1d_sorted(atoms(a), atoms(b), s), ref, 1e-12);
            EXPECT_NEAR(wasserstein_discrete(atoms(a), atoms(b), CostMetric(s)), ref, 1e-12);
        }
        auto rev = a;
        std::reverse(rev.begin(), rev.end());
        EXPECT_EQ(wasserstein_1d_sorted(atoms(rev), atoms(b), 2.0), wasserstein_1d_sorted(atoms(a), atoms(b), 2.0));
    }
}

TEST(Transport, UnequalWeightsMatchHandSolution) {
    // Mass 1/2 at 0 and 1/2 at 3 against mass 1 at 1: W1 = 0.5 * 1 + 0.5 * 2.
    const EmpiricalDistribution a(1, {0.0, 3.0});
    const EmpiricalDistribution b(1, {1.0});
    EXPECT_NEAR(wasserstein_discrete(a, b, CostMetric(1.0)), 1.5, 1e-12);
    const EmpiricalDistribution c(1, {0.0, 1.0, 2.0}, {0.2, 0.5, 0.3});
    const EmpiricalDistribution d(1, {0.0, 2.0}, {0.5, 0.5});
    // 0.2 stays at 0, 0.3 moves 1 -> 0, 0.2 moves 1 -> 2, 0.3 stays at 2.
    EXPECT_NEAR(wasserstein_discrete(c, d, CostMetric(1.0)), 0.5, 1e-12);
}

TEST(Transport, MetricAxiomsForOrderOne) {
    Rng rng = make_rng(2);
    std::normal_distribution<double> nd;
    const CostMetric m1(1.0);
    auto cloud = [&](std::size_t n) {
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < n; ++i) rows.push_back({nd(rng), nd(rng)});
        return EmpiricalDistribution(rows);
    };
    for (int rep = 0; rep < 10; ++rep) {
        const auto a = cloud(5), b = cloud(5), c = cloud(5);
        EXPECT_NEAR(wasserstein_discrete(a, b, m1), wasserstein_discrete(b, a, m1), 1e-12);
        EXPECT_LE(wasserstein_discrete(a, c, m1), wasserstein_discrete(a, b, m1) + wasserstein_discrete(b, c, m1) + 1e-10);
        EXPECT_NEAR(wasserstein_discrete(a, a, m1), 0.0, 1e-12);
    }
}

TEST(Transport, SizeGuard) {
    std::vector<std::vector<double>> rows(kMaxTransportAtoms + 1, std::vector<double>{0.0, 0.0});
    const EmpiricalDistribution big(rows);
    EXPECT_THROW(wasserstein_discrete(big, big, CostMetric(1.0)), Error);
}

TEST(Transport, PrechangeEstimator) {
    const auto q = PreChangeModel::gaussian(0.0, 1.0);
    const CostMetric m2(2.0);
    EXPECT_NEAR(wasserstein_to_prechange(q, atoms({0.0}), m2, 20000, 1), 1.0, 0.02);
    double sum = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng = make_rng(1000 + seed);
        const auto pn = sample_empirical(PreChangeModel::gaussian(0.5, 1.0), rng, 256);
        sum += wasserstein_to_prechange(q, pn, m2, 512, seed);
    }
    EXPECT_NEAR(sum / 10, 0.5, 0.1);
    Rng rng = make_rng(77);
    const double small = wasserstein_to_prechange(q, sample_empirical(q, rng, 16), m2, 512, 3);
    const double large = wasserstein_to_prechange(q, sample_empirical(q, rng, 256), m2, 512, 3);
    EXPECT_LT(large, small);
    EXPECT_LT(large, 0.25);
}

TEST(Transport, GaussianClosedForm) {
    EXPECT_DOUBLE_EQ(gaussian_w2(0.0, 1.0, 0.5, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(gaussian_w2(0.0, 1.0, 0.0, 4.0), 1.0);
}
