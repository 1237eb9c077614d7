#include "drcusum/radius.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "drcusum/error.hpp"
#include "drcusum/transport.hpp"

namespace drcusum {

namespace {

void check_concentration_args(double delta, const TransportConstant& tc, double s) {
    require(delta > 0.0 && delta < 1.0, "delta must lie in (0, 1)");
    require(std::isfinite(tc.c) && tc.c > 0.0, "transport constant must be positive");
    require(s >= 1.0 && s <= 2.0, "order s must lie in [1, 2]");
}

}  // namespace

std::string to_string(TransportSource source) {
    switch (source) {
    case TransportSource::HammingT1: return "hamming_t1";
    case TransportSource::GaussianT2: return "gaussian_t2";
    case TransportSource::GaussianDiagT2: return "gaussian_diag_t2";
    case TransportSource::UserSupplied: return "user";
    }
    return "user";
}

double gamma_s(double s) {
    require(s >= 1.0 && s <= 2.0, "gamma_s: s must lie in [1, 2]");
    return s < 2.0 ? 1.0 : 3.0 - 2.0 * std::sqrt(2.0);
}

TransportConstant hamming_constant() { return {0.25, TransportSource::HammingT1, 1.0}; }

TransportConstant user_constant(double c, double order_s) {
    require(std::isfinite(c) && c > 0.0, "transport constant must be positive");
    require(order_s >= 1.0, "order s must be >= 1");
    return {c, TransportSource::UserSupplied, order_s};
}

TransportConstant ts_constant(const PreChangeModel& model) {
    std::vector<double> var;
    if (const auto* g = std::get_if<Gaussian1D>(&model.variant())) {
        var = {g->variance};
    } else if (const auto* d = std::get_if<GaussianDiag>(&model.variant())) {
        var = d->variance;
    } else {
        fail(ErrorKind::InvalidArgument, "ts_constant: no known constant for " + model.describe() + "; supply c explicitly");
    }
    if (std::all_of(var.begin(), var.end(), [](double v) { return v == 1.0; }))
        return {1.0, TransportSource::GaussianT2, 2.0};
    const double kappa = 1.0 / *std::max_element(var.begin(), var.end());
    return {1.0 / (2.0 * kappa), TransportSource::GaussianDiagT2, 2.0};
}

double radius_lower_bound(double delta, const TransportConstant& tc, double s, std::size_t n) {
    check_concentration_args(delta, tc, s);
    require(n >= 1, "n must be >= 1");
    return std::sqrt(2.0 * std::abs(std::log(delta)) * tc.c / (gamma_s(s) * static_cast<double>(n)));
}

double radius_upper_bound(double wpq, double delta, const TransportConstant& tc, double s, std::size_t n) {
    require(std::isfinite(wpq) && wpq >= 0.0, "W_s(P, Q) must be finite and >= 0");
    return wpq - radius_lower_bound(delta, tc, s, n);
}

double min_samples(double delta, const TransportConstant& tc, double s, double wpq) {
    check_concentration_args(delta, tc, s);
    require(std::isfinite(wpq) && wpq > 0.0, "min_samples: W_s(P, Q) must be positive");
    return 8.0 * std::abs(std::log(delta)) * tc.c / (gamma_s(s) * wpq * wpq);
}

WaddBound wadd_upper_bound(double gamma, const TransportConstant& tc, double wpq, double radius) {
    require(std::isfinite(gamma) && gamma > 1.0, "wadd_upper_bound: gamma must exceed 1");
    require(std::isfinite(tc.c) && tc.c > 0.0, "transport constant must be positive");
    require(radius >= 0.0 && wpq >= 0.0, "wadd_upper_bound: distances must be >= 0");
    const double gap = wpq - 2.0 * radius;
    if (!(gap > 0.0)) return {std::numeric_limits<double>::infinity(), false};
    return {2.0 * tc.c * std::log(gamma) / (gap * gap), true};
}

RadiusReport radius_report(std::size_t n, double delta, const TransportConstant& tc, double s, double wpq_estimate,
                           double empirical_cap) {
    RadiusReport r;
    r.lower = radius_lower_bound(delta, tc, s, n);
    r.upper = radius_upper_bound(wpq_estimate, delta, tc, s, n);
    r.n_min = min_samples(delta, tc, s, wpq_estimate);
    r.empirical_cap = empirical_cap;
    r.feasible = r.lower <= std::min(r.upper, r.empirical_cap);
    return r;
}

RadiusReport radius_report(const PreChangeModel& q, const EmpiricalDistribution& pn, double delta,
                           const TransportConstant& tc, double s, double wpq_estimate, const RadiusReportOptions& opts) {
    const double cap = wasserstein_to_prechange(q, pn, CostMetric(s), opts.mc_size, opts.seed);
    return radius_report(pn.size(), delta, tc, s, wpq_estimate, cap);
}

}  // namespace drcusum
