#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "drcusum/distributions.hpp"

namespace drcusum {

enum class TransportSource { HammingT1, GaussianT2, GaussianDiagT2, UserSupplied };

// Constant c of a T_s(c) transportation-cost inequality,
// W_s(P, Q) <= sqrt(2 c KL(Q || P)).
struct TransportConstant {
    double c = 1.0;
    TransportSource source = TransportSource::UserSupplied;
    double order_s = 2.0;
};

std::string to_string(TransportSource source);

// 1 on [1, 2), 3 - 2 sqrt(2) at s = 2.
double gamma_s(double s);

TransportConstant hamming_constant();
TransportConstant user_constant(double c, double order_s);
// Unit-variance Gaussians satisfy T_2(1). Other diagonal Gaussians use
// c = 1 / (2 kappa) with kappa = 1 / max variance.
TransportConstant ts_constant(const PreChangeModel& model);

// sqrt(2 |log delta| c / (gamma_s n))
double radius_lower_bound(double delta, const TransportConstant& tc, double s, std::size_t n);
// wpq - radius_lower_bound; negative values mean no admissible radius.
double radius_upper_bound(double wpq, double delta, const TransportConstant& tc, double s, std::size_t n);
// 8 |log delta| c / (gamma_s wpq^2)
double min_samples(double delta, const TransportConstant& tc, double s, double wpq);

struct WaddBound {
    double value = 0.0;  // +inf when infeasible
    bool feasible = false;
};
// 2 c log(gamma) / (wpq - 2 r)^2, feasible only while wpq > 2 r.
WaddBound wadd_upper_bound(double gamma, const TransportConstant& tc, double wpq, double radius);

struct RadiusReport {
    double lower = 0.0;
    double upper = 0.0;
    double n_min = 0.0;
    double empirical_cap = 0.0;  // estimate of W_s(Q, Pn)
    bool feasible = false;       // lower <= min(upper, empirical_cap)
};

struct RadiusReportOptions {
    std::size_t mc_size = 512;
    std::uint64_t seed = 0;
};

RadiusReport radius_report(const PreChangeModel& q, const EmpiricalDistribution& pn, double delta,
                           const TransportConstant& tc, double s, double wpq_estimate,
                           const RadiusReportOptions& opts = {});

// Same bounds from given numbers, with a precomputed empirical cap.
RadiusReport radius_report(std::size_t n, double delta, const TransportConstant& tc, double s, double wpq_estimate,
                           double empirical_cap);

}  // namespace drcusum
