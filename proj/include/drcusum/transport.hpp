#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "drcusum/distributions.hpp"

namespace drcusum {

inline constexpr std::size_t kMaxTransportAtoms = 512;

// Minimum-cost perfect matching on a dense n x n cost matrix (row-major).
// Returns assignment[row] = column.
std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n);

// Optimal coupling between weight vectors a (rows) and b (columns) of a dense
// cost matrix; returns the minimal total cost. Weights must each sum to 1.
double solve_transport(const std::vector<double>& cost, const std::vector<double>& a, const std::vector<double>& b);

// W_s between two atom sets, exact. Equal-size uniform inputs use the
// assignment solver, everything else the transportation problem.
double wasserstein_discrete(const EmpiricalDistribution& a, const EmpiricalDistribution& b, const CostMetric& metric);

// Quantile coupling for 1-d, equal-size, uniform inputs.
double wasserstein_1d_sorted(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double order_s);

// Plug-in estimate of W_s(Q, Pn): draws ceil(mc_size / n) * n points from Q
// and matches them against Pn with each atom repeated.
double wasserstein_to_prechange(const PreChangeModel& q, const EmpiricalDistribution& pn, const CostMetric& metric,
                                std::size_t mc_size, std::uint64_t seed);

// Plug-in estimate of W_s(Q, P) from mc_size draws of each model.
double wasserstein_between_models(const PreChangeModel& q, const PreChangeModel& p, const CostMetric& metric,
                                  std::size_t mc_size, std::uint64_t seed);

// W_2 between 1-d Gaussians.
double gaussian_w2(double mean0, double var0, double mean1, double var1);

}  // namespace drcusum
