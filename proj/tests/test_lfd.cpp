#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "drcusum/error.hpp"
#include "drcusum/lfd.hpp"
#include "drcusum/quadrature.hpp"
#include "drcusum/rng.hpp"

using namespace drcusum;

namespace {

EmpiricalDistribution atoms(std::initializer_list<double> xs) {
    std::vector<std::vector<double>> rows;
    for (double x : xs) rows.push_back({x});
    return EmpiricalDistribution(rows);
}

double at(const auto& f, double x) {
    const double v[1] = {x};
    return f(ObsView(v, 1));
}

const PreChangeModel kStd = PreChangeModel::gaussian(0.0, 1.0);
const CostMetric kW2(2.0);

EmpiricalDistribution random_training(Rng& rng, std::size_t n, double mu) {
    std::normal_distribution<double> nd(mu, 1.0);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < n; ++i) rows.push_back({nd(rng)});
    return EmpiricalDistribution(rows);
}

// Integral of g(x) p*(x) over the real line.
template <class G>
double lfd_integral(const LfdScorer& s, G&& g) {
    const auto f = [&](double x) {
        const double v[1] = {x};
        return std::exp(s.lfd_log_density(ObsView(v, 1))) * g(x);
    };
    return quad::integrate(f, -14.0, 14.0, 1e-11, 400);
}

}  // namespace

TEST(ComputeC, Examples) {
    EXPECT_EQ(at([&](ObsView x) { return compute_C({0.0, {0.0, 0.0}}, kW2, atoms({1.0, 2.0}), x); }, 5.0), 0.0);
    EXPECT_DOUBLE_EQ(at([&](ObsView x) { return compute_C({1.0, {0.0}}, kW2, atoms({0.0}), x); }, 2.0), 4.0);
    EXPECT_DOUBLE_EQ(at([&](ObsView x) { return compute_C({1.0, {0.0, 4.0}}, kW2, atoms({0.0, 3.0}), x); }, 2.0), -3.0);
}

TEST(Eta, ZeroLambdaIsExpMaxU) {
    const auto tr = atoms({0.3, -1.0, 2.0});
    const DualPoint p{0.0, {0.1, 0.7, -0.4}};
    EXPECT_NEAR(eta(p, kStd, kW2, tr, EtaMethod::GaussianAnalytic), std::exp(0.7), 1e-14);
    EXPECT_NEAR(eta(p, kStd, kW2, tr, EtaMethod::Quadrature), std::exp(0.7), 1e-9);
    EXPECT_NEAR(eta_gaussian_analytic({0.0, {1.0, 2.0}}, atoms({0.0, 1.0}), Gaussian1D{0.0, 1.0}), std::exp(2.0), 1e-13);
}

TEST(Eta, SingleAtomClosedForm) {
    const double v = eta_gaussian_analytic({1.0, {0.0}}, atoms({1.0}), Gaussian1D{0.0, 1.0});
    EXPECT_NEAR(v, std::exp(-1.0 / 3.0) / std::sqrt(3.0), 1e-14);
    EXPECT_NEAR(v, 0.4137, 1e-4);
    for (double lam : {0.1, 0.5, 3.0}) {
        for (double w : {-1.5, 0.0, 2.0}) {
            const double expect = std::exp(-lam * w * w / (1 + 2 * lam) + 0.3) / std::sqrt(1 + 2 * lam);
            EXPECT_NEAR(eta({lam, {0.3}}, kStd, kW2, atoms({w}), EtaMethod::GaussianAnalytic), expect, 1e-13);
            EXPECT_NEAR(eta({lam, {0.3}}, kStd, kW2, atoms({w}), EtaMethod::Quadrature), expect, 1e-9);
        }
    }
}

TEST(Eta, AnalyticMatchesQuadratureOffStandard) {
    Rng rng = make_rng(5);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const auto q = PreChangeModel::gaussian(0.7, 2.5);
    for (int rep = 0; rep < 5; ++rep) {
        const auto tr = random_training(rng, 4, 1.0);
        DualPoint p{0.2 + std::abs(U(rng)), {U(rng), U(rng), U(rng), U(rng)}};
        EXPECT_NEAR(eta(p, q, kW2, tr, EtaMethod::GaussianAnalytic), eta(p, q, kW2, tr, EtaMethod::Quadrature), 1e-8);
    }
}

TEST(Eta, EmpiricalSingleSampleWithZeroCost) {
    const PreChangeModel q(EmpiricalPreChange{atoms({0.5})});
    EXPECT_NEAR(eta({2.0, {0.0}}, q, kW2, atoms({0.5})), 1.0, 1e-15);
}

TEST(DualObjective, Examples) {
    const auto tr = atoms({0.5, 1.0});
    EXPECT_EQ(dual_objective({0.0, {0.0, 0.0}}, 0.4, kStd, kW2, tr), 0.0);
    const DualPoint p{0.8, {0.2, -0.1}};
    const double a = dual_objective(p, 0.3, kStd, kW2, tr);
    const double b = dual_objective(p, 0.6, kStd, kW2, tr);
    EXPECT_NEAR(b - a, -0.8 * (0.36 - 0.09), 1e-12);
    EXPECT_NEAR(dual_objective(p, 0.3, kStd, kW2, tr, EtaMethod::GaussianAnalytic),
                dual_objective(p, 0.3, kStd, kW2, tr, EtaMethod::Quadrature), 1e-8);
    EXPECT_THROW(dual_objective({-0.1, {0.0, 0.0}}, 0.3, kStd, kW2, tr), Error);
}

TEST(DualObjective, Concave) {
    Rng rng = make_rng(17);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    const auto tr = random_training(rng, 3, 0.8);
    for (int i = 0; i < 60; ++i) {
        const DualPoint p{3 * U(rng), {U(rng) - 0.5, U(rng) - 0.5, U(rng) - 0.5}};
        const DualPoint q{3 * U(rng), {U(rng) - 0.5, U(rng) - 0.5, U(rng) - 0.5}};
        const double t = U(rng);
        DualPoint m{t * p.lambda + (1 - t) * q.lambda, {}};
        for (int k = 0; k < 3; ++k) m.u.push_back(t * p.u[k] + (1 - t) * q.u[k]);
        const double fm = dual_objective(m, 0.4, kStd, kW2, tr);
        const double fp = dual_objective(p, 0.4, kStd, kW2, tr);
        const double fq = dual_objective(q, 0.4, kStd, kW2, tr);
        EXPECT_GE(fm, t * fp + (1 - t) * fq - 1e-8);
    }
}

TEST(ClosedForm, MatchesNumericSolver) {
    for (double w : {0.5, 1.0, 2.0}) {
        for (double r : {0.1, 0.3, 0.6}) {
            const double cf = closed_form_lambda_n1(w, r);
            const auto sol = solve_dual(kStd, kW2, atoms({w}), r);
            ASSERT_GT(cf, 0.0);
            EXPECT_NEAR(sol.point.lambda / cf, 1.0, 1e-4) << "w=" << w << " r=" << r;
        }
    }
}

TEST(ClosedForm, BeyondThresholdIsZero) {
    EXPECT_EQ(closed_form_lambda_n1(1.0, 1.5), 0.0);
    const auto sol = solve_dual(kStd, kW2, atoms({1.0}), 1.5);
    EXPECT_EQ(sol.point.lambda, 0.0);
    EXPECT_EQ(sol.dual_value, 0.0);
    EXPECT_TRUE(sol.converged);
}

TEST(ClosedForm, AtomAtModeGivesQ) {
    // W2(Q, delta_0) = 1, so any radius >= 1 contains Q.
    for (double r : {1.0, 1.3, 2.0}) EXPECT_NEAR(solve_dual(kStd, kW2, atoms({0.0}), r).dual_value, 0.0, 1e-9);
    EXPECT_GT(solve_dual(kStd, kW2, atoms({0.0}), 0.5).dual_value, 0.0);
}

TEST(SolveDual, InternalConsistency) {
    Rng rng = make_rng(3);
    const auto tr = random_training(rng, 8, 1.0);
    const auto sol = solve_dual(kStd, kW2, tr, 0.35);
    ASSERT_TRUE(sol.converged);
    EXPECT_GE(sol.point.lambda, 0.0);
    EXPECT_GE(sol.dual_value, 0.0);
    double mean_u = 0.0;
    for (double u : sol.point.u) mean_u += u / tr.size();
    EXPECT_NEAR(sol.dual_value, -sol.point.lambda * 0.35 * 0.35 + mean_u - sol.log_eta, 1e-10);
    EXPECT_NEAR(sol.dual_value, dual_objective(sol.point, 0.35, kStd, kW2, tr), 1e-10);
}

TEST(SolveDual, GrowsAsRadiusShrinks) {
    const auto tr = atoms({0.4, 1.1, 1.9});
    double prev = -1.0;
    for (double r : {1.2, 0.9, 0.6, 0.4, 0.25, 0.15, 0.1, 0.05}) {
        const double v = solve_dual(kStd, kW2, tr, r).dual_value;
        EXPECT_GT(v, prev) << r;
        prev = v;
    }
}

TEST(SolveDual, NonIncreasingAndStaysZero) {
    Rng rng = make_rng(9);
    const auto tr = random_training(rng, 10, 1.0);
    double prev = INFINITY;
    bool hit_zero = false;
    for (int i = 1; i <= 20; ++i) {
        const double v = solve_dual(kStd, kW2, tr, 0.1 * i).dual_value;
        EXPECT_LE(v, prev + 1e-9);
        if (hit_zero) EXPECT_EQ(v, 0.0);
        hit_zero = hit_zero || v == 0.0;
        prev = v;
    }
    EXPECT_TRUE(hit_zero);
}

TEST(SolveDual, Deterministic) {
    Rng rng = make_rng(21);
    const auto tr = random_training(rng, 12, 0.5);
    const auto a = solve_dual(kStd, kW2, tr, 0.3);
    const auto b = solve_dual(kStd, kW2, tr, 0.3);
    EXPECT_EQ(a.point.lambda, b.point.lambda);
    EXPECT_EQ(a.point.u, b.point.u);
    EXPECT_EQ(a.dual_value, b.dual_value);
    EXPECT_EQ(a.iterations, b.iterations);
}

TEST(SolveDual, DuplicatesShareThePotential) {
    const auto tr = atoms({0.5, 1.5, 0.5, 0.5});
    const auto sol = solve_dual(kStd, kW2, tr, 0.3);
    EXPECT_EQ(sol.point.u[0], sol.point.u[2]);
    EXPECT_EQ(sol.point.u[0], sol.point.u[3]);
    const auto merged = solve_dual(kStd, kW2, EmpiricalDistribution(1, {0.5, 1.5}, {0.75, 0.25}), 0.3);
    EXPECT_NEAR(sol.dual_value, merged.dual_value, 1e-9);
}

TEST(SolveDual, RejectsBadRadius) {
    EXPECT_THROW(solve_dual(kStd, kW2, atoms({1.0}), 0.0), Error);
    EXPECT_THROW(solve_dual(kStd, kW2, atoms({1.0}), -1.0), Error);
    EXPECT_THROW(LfdScorer::fit(kStd, atoms({1.0}), kW2, 0.0), Error);
}

TEST(SolveDual, OrderOneQuadrature) {
    const auto tr = atoms({1.0, 1.6, 2.2});
    const auto sol = solve_dual(kStd, CostMetric(1.0), tr, 0.3);
    EXPECT_TRUE(sol.converged);
    const auto s = LfdScorer(kStd, tr, CostMetric(1.0), 0.3, sol);
    EXPECT_NEAR(lfd_integral(s, [](double) { return 1.0; }), 1.0, 1e-5);
    EXPECT_NEAR(lfd_integral(s, [&](double x) { return at([&](ObsView v) { return s.llr(v); }, x); }), sol.dual_value,
                1e-4);
}

TEST(Lfd, NormalizedAndStronglyDual) {
    Rng rng = make_rng(33);
    for (int rep = 0; rep < 4; ++rep) {
        const auto tr = random_training(rng, 2 + 3 * rep, 1.0);
        const auto s = LfdScorer::fit(kStd, tr, kW2, 0.2 + 0.1 * rep);
        EXPECT_NEAR(lfd_integral(s, [](double) { return 1.0; }), 1.0, 1e-5);
        const double kl = lfd_integral(s, [&](double x) { return at([&](ObsView v) { return s.llr(v); }, x); });
        EXPECT_NEAR(kl, s.solution().dual_value, 1e-4);
    }
}

TEST(Lfd, BetaPreChangeQuadraturePath) {
    const PreChangeModel q(GenericDensity::beta(2.0, 3.0));
    Rng rng = make_rng(4);
    std::vector<std::vector<double>> rows;
    const PreChangeModel p(GenericDensity::beta(3.0, 2.0));
    std::vector<double> x(1);
    for (int i = 0; i < 10; ++i) {
        p.draw(rng, x);
        rows.push_back(x);
    }
    const auto s = LfdScorer::fit(q, EmpiricalDistribution(rows), kW2, 0.05);
    ASSERT_TRUE(s.solution().converged);
    const auto f = [&](double t) {
        const double v[1] = {t};
        return std::exp(s.lfd_log_density(ObsView(v, 1)));
    };
    EXPECT_NEAR(quad::integrate(f, 0.0, 1.0, 1e-11, 200), 1.0, 1e-5);
}

TEST(Lfd, LlrDefinitionAndDegenerateCase) {
    const auto tr = atoms({0.2, 0.9});
    const auto s = LfdScorer::fit(kStd, tr, kW2, 0.3);
    for (double x : {-2.0, 0.0, 0.5, 3.0}) {
        const double v[1] = {x};
        EXPECT_NEAR(s.llr(ObsView(v, 1)),
                    -compute_C(s.solution().point, kW2, tr, ObsView(v, 1)) - s.solution().log_eta, 1e-12);
        EXPECT_EQ(llr(s, ObsView(v, 1)), s.llr(ObsView(v, 1)));
    }
    const auto big = LfdScorer::fit(kStd, tr, kW2, 5.0);
    for (double x : {-2.0, 0.0, 3.0}) {
        const double v[1] = {x};
        EXPECT_NEAR(big.llr(ObsView(v, 1)), 0.0, 1e-14);
        EXPECT_NEAR(big.lfd_log_density(ObsView(v, 1)), kStd.log_density(ObsView(v, 1)), 1e-14);
    }
}

TEST(Lfd, SingleAtomLlrDecreasesWithDistance) {
    const auto s = LfdScorer::fit(kStd, atoms({1.0}), kW2, 0.3);
    ASSERT_GT(s.solution().point.lambda, 0.0);
    // llr(x) = -lambda (x - 1)^2 + const, so it orders points by distance to the atom.
    double prev = INFINITY;
    for (double d : {0.0, 0.3, 0.8, 1.5, 3.0}) {
        const double v[1] = {1.0 + d};
        const double l = s.llr(ObsView(v, 1));
        EXPECT_LT(l, prev);
        prev = l;
    }
}

TEST(Lfd, LikelihoodRatioHasUnitMeanUnderQ) {
    const auto s = LfdScorer::fit(kStd, atoms({0.3, 0.8, 1.2}), kW2, 0.4);
    Rng rng = make_rng(99);
    std::normal_distribution<double> nd;
    const int n = 100000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v[1] = {nd(rng)};
        const double e = std::exp(s.llr(ObsView(v, 1)));
        sum += e;
        sum2 += e * e;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sum2 / n - mean * mean) / n);
    EXPECT_LT(std::abs(mean - 1.0), 3 * se);
}

TEST(Lfd, WeakStochasticBoundedness) {
    const auto tr = atoms({0.4, 0.9, 1.3, 0.1});
    const double r = 0.4;
    auto s = std::make_shared<const LfdScorer>(LfdScorer::fit(kStd, tr, kW2, r));
    const double kl = s->solution().dual_value;

    const auto pstar = lfd_model(s);
    Rng rng = make_rng(123);
    const int n = 40000;
    std::vector<double> x(1);
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        pstar.draw(rng, x);
        const double l = s->llr(x);
        sum += l;
        sum2 += l * l;
    }
    double mean = sum / n;
    double se = std::sqrt((sum2 / n - mean * mean) / n);
    EXPECT_LT(std::abs(mean - kl), 3 * se);

    // Atoms smoothed by N(0, 0.1^2): W2 to the empirical measure is at most 0.1 < r.
    std::normal_distribution<double> jitter(0.0, 0.1);
    std::uniform_int_distribution<std::size_t> pick(0, tr.size() - 1);
    sum = sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        x[0] = tr.atom(pick(rng))[0] + jitter(rng);
        const double l = s->llr(x);
        sum += l;
        sum2 += l * l;
    }
    mean = sum / n;
    se = std::sqrt((sum2 / n - mean * mean) / n);
    EXPECT_GE(mean, kl - 3 * se);
}

TEST(Lfd, SampleAveragePathForEmpiricalPreChange) {
    Rng rng = make_rng(8);
    const auto pool = random_training(rng, 4000, 0.0);
    const PreChangeModel q(EmpiricalPreChange{pool});
    const auto tr = atoms({0.8, 1.2, 1.5});
    const auto sol = solve_dual(q, kW2, tr, 0.4);
    EXPECT_TRUE(sol.converged);
    const auto ref = solve_dual(kStd, kW2, tr, 0.4);
    EXPECT_NEAR(sol.dual_value, ref.dual_value, 0.05);
}

TEST(Lfd, MultivariateSamplePath) {
    const PreChangeModel q(GaussianDiag{{0.0, 0.0}, {1.0, 1.0}});
    const EmpiricalDistribution tr(std::vector<std::vector<double>>{{1.0, 0.5}, {0.5, 1.0}, {1.2, 1.1}});
    SolveOptions opts;
    opts.mc_size = 50000;
    const auto s = LfdScorer::fit(q, tr, kW2, 0.5, opts);
    EXPECT_TRUE(s.solution().converged);
    EXPECT_GT(s.solution().dual_value, 0.0);
    EXPECT_EQ(s.dim(), 2u);
    const std::vector<double> near{1.0, 1.0}, far{-2.0, -2.0};
    EXPECT_GT(s.llr(near), s.llr(far));
}

TEST(Lfd, JsonRoundTrip) {
    const auto s = LfdScorer::fit(kStd, atoms({0.2, 0.9, 1.4}), kW2, 0.3);
    const auto back = LfdScorer::from_json(nlohmann::json::parse(s.to_json().dump()));
    for (double x : {-1.0, 0.3, 2.2}) {
        const double v[1] = {x};
        EXPECT_EQ(back.llr(ObsView(v, 1)), s.llr(ObsView(v, 1)));
    }
    EXPECT_EQ(back.solution().dual_value, s.solution().dual_value);
    auto bad = s.to_json();
    bad["format"] = "other";
    EXPECT_THROW(LfdScorer::from_json(bad), Error);
}

TEST(InnerMin, PaperValues) {
    EXPECT_NEAR(inner_min_oracle(std::vector<double>{0.0}), -std::exp(-1.0), 1e-15);
    EXPECT_NEAR(inner_min_oracle(std::vector<double>{1.0, 2.0}), -std::exp(-2.0), 1e-15);
    EXPECT_NEAR(inner_min_oracle(std::vector<double>{1.0, 1.0}), -std::exp(-2.0), 1e-15);
}

TEST(InnerMin, MatchesGridWithDuplicates) {
    // Brute force over [0,1]^2 at 400^2 points, refined around the best cell.
    const std::vector<double> c{1.0, 1.0};
    const auto f = [&](double a1, double a2) {
        const double s = a1 + a2;
        return (s > 0 ? s * std::log(s) : 0.0) + c[0] * a1 + c[1] * a2;
    };
    double best = INFINITY;
    for (int i = 0; i <= 400; ++i)
        for (int j = 0; j <= 400; ++j) best = std::min(best, f(i / 400.0, j / 400.0));
    EXPECT_NEAR(best, inner_min_oracle(c), 1e-4);
}
