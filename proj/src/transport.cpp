#include "drcusum/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "drcusum/error.hpp"

namespace drcusum {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_size(std::size_t n, const char* what) {
    if (n > kMaxTransportAtoms)
        fail(ErrorKind::InvalidArgument, std::string(what) + ": " + std::to_string(n) + " atoms exceeds the limit of " +
                                             std::to_string(kMaxTransportAtoms));
}

std::vector<double> cost_matrix(const EmpiricalDistribution& a, const EmpiricalDistribution& b, const CostMetric& metric) {
    std::vector<double> c(a.size() * b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b.size(); ++j) c[i * b.size() + j] = cost_power(metric, a.atom(i), b.atom(j));
    return c;
}

double root(double v, double s) { return s == 1.0 ? v : std::pow(std::max(v, 0.0), 1.0 / s); }

}  // namespace

// Shortest augmenting paths with row/column potentials.
std::vector<std::size_t> solve_assignment(const std::vector<double>& cost, std::size_t n) {
    require(cost.size() == n * n, "solve_assignment: cost matrix must be n x n");
    if (n == 0) return {};
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), kInf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = p[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> assignment(n);
    for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
    return assignment;
}

// Successive shortest paths on the bipartite network source -> rows ->
// columns -> sink, with Dijkstra on reduced costs over the dense residual
// graph. Flows are real-valued; each augmentation saturates a supply, a
// demand, or a reverse arc.
double solve_transport(const std::vector<double>& cost, const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    const std::size_t m = b.size();
    require(cost.size() == n * m, "solve_transport: cost matrix shape mismatch");
    require(n >= 1 && m >= 1, "solve_transport: empty marginal");
    for (double c : cost) require(std::isfinite(c) && c >= 0.0, "solve_transport: costs must be finite and >= 0");
    const double sa = std::accumulate(a.begin(), a.end(), 0.0);
    const double sb = std::accumulate(b.begin(), b.end(), 0.0);
    require(std::abs(sa - sb) <= 1e-9 * std::max(sa, 1.0), "solve_transport: marginals must have equal mass");

    constexpr double kEps = 1e-14;
    std::vector<double> supply(a), demand(b);
    std::vector<double> flow(n * m, 0.0);
    // Reduced cost of row i -> column j is cost - pot_row[i] + pot_col[j].
    std::vector<double> pot_row(n, 0.0), pot_col(m, 0.0);
    double pot_sink = 0.0;
    // Nodes: rows 0..n-1, columns n..n+m-1.
    const std::size_t nodes = n + m;
    std::vector<double> dist(nodes);
    std::vector<std::size_t> prev(nodes);
    std::vector<char> done(nodes);

    double remaining = sa;
    for (std::size_t guard = 0; remaining > kEps * std::max(sa, 1.0) && guard < 8 * (n + m) * (n + m); ++guard) {
        std::fill(dist.begin(), dist.end(), kInf);
        std::fill(done.begin(), done.end(), 0);
        constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
        std::fill(prev.begin(), prev.end(), kNone);
        for (std::size_t i = 0; i < n; ++i)
            if (supply[i] > kEps) dist[i] = 0.0;
        for (;;) {
            std::size_t best = kNone;
            for (std::size_t v = 0; v < nodes; ++v)
                if (!done[v] && dist[v] < kInf && (best == kNone || dist[v] < dist[best])) best = v;
            if (best == kNone) break;
            done[best] = 1;
            if (best < n) {
                const std::size_t i = best;
                for (std::size_t j = 0; j < m; ++j) {
                    const double rc = cost[i * m + j] - pot_row[i] + pot_col[j];
                    const double nd = dist[i] + std::max(rc, 0.0);
                    if (nd < dist[n + j]) {
                        dist[n + j] = nd;
                        prev[n + j] = i;
                    }
                }
            } else {
                const std::size_t j = best - n;
                for (std::size_t i = 0; i < n; ++i) {
                    if (flow[i * m + j] <= kEps) continue;
                    const double rc = -(cost[i * m + j] - pot_row[i] + pot_col[j]);
                    const double nd = dist[best] + std::max(rc, 0.0);
                    if (nd < dist[i]) {
                        dist[i] = nd;
                        prev[i] = best;
                    }
                }
            }
        }
        // Columns reach the super sink at reduced cost p_col - p_sink.
        std::size_t sink = kNone;
        double d_sink = kInf;
        for (std::size_t j = 0; j < m; ++j) {
            if (demand[j] <= kEps || dist[n + j] == kInf) continue;
            const double d = dist[n + j] + std::max(-pot_col[j] - pot_sink, 0.0);
            if (d < d_sink) {
                d_sink = d;
                sink = j;
            }
        }
        if (sink == kNone) fail(ErrorKind::Solver, "solve_transport: no augmenting path");
        for (std::size_t i = 0; i < n; ++i) pot_row[i] -= std::min(dist[i], d_sink);
        for (std::size_t j = 0; j < m; ++j) pot_col[j] -= std::min(dist[n + j], d_sink);
        pot_sink += d_sink;

        double amount = demand[sink];
        std::size_t v = n + sink;
        while (true) {
            const std::size_t u = prev[v];
            if (v >= n) {
                v = u;
                if (prev[v] == kNone) break;
            } else {
                const std::size_t j = u - n;
                amount = std::min(amount, flow[v * m + j]);
                v = u;
            }
        }
        const std::size_t origin = v;
        amount = std::min(amount, supply[origin]);
        v = n + sink;
        while (true) {
            const std::size_t u = prev[v];
            if (v >= n) {
                flow[u * m + (v - n)] += amount;
                v = u;
                if (prev[v] == std::numeric_limits<std::size_t>::max()) break;
            } else {
                flow[v * m + (u - n)] -= amount;
                v = u;
            }
        }
        supply[origin] -= amount;
        demand[sink] -= amount;
        remaining -= amount;
    }
    if (remaining > 1e-9 * std::max(sa, 1.0)) fail(ErrorKind::Solver, "solve_transport: flow did not saturate");
    double total = 0.0;
    for (std::size_t k = 0; k < flow.size(); ++k) total += std::max(flow[k], 0.0) * cost[k];
    return total;
}

double wasserstein_discrete(const EmpiricalDistribution& a, const EmpiricalDistribution& b, const CostMetric& metric) {
    require(a.size() >= 1 && b.size() >= 1, "wasserstein_discrete: empty distribution");
    require_dim(a.dim(), b.dim(), "wasserstein_discrete");
    check_size(a.size(), "wasserstein_discrete");
    check_size(b.size(), "wasserstein_discrete");
    const auto c = cost_matrix(a, b, metric);
    if (a.size() == b.size() && a.uniform() && b.uniform()) {
        const std::size_t n = a.size();
        const auto match = solve_assignment(c, n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) total += c[i * n + match[i]];
        return root(total / static_cast<double>(n), metric.order_s);
    }
    return root(solve_transport(c, a.weights(), b.weights()), metric.order_s);
}

double wasserstein_1d_sorted(const EmpiricalDistribution& a, const EmpiricalDistribution& b, double order_s) {
    require(a.dim() == 1 && b.dim() == 1, "wasserstein_1d_sorted: 1-d inputs only");
    require(a.size() == b.size() && a.size() >= 1, "wasserstein_1d_sorted: sizes must be equal and positive");
    require(a.uniform() && b.uniform(), "wasserstein_1d_sorted: uniform weights only");
    require(order_s >= 1.0, "wasserstein_1d_sorted: order must be >= 1");
    std::vector<double> x = a.flat(), y = b.flat();
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double total = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) total += std::pow(std::abs(x[i] - y[i]), order_s);
    return root(total / static_cast<double>(x.size()), order_s);
}

double wasserstein_to_prechange(const PreChangeModel& q, const EmpiricalDistribution& pn, const CostMetric& metric,
                                std::size_t mc_size, std::uint64_t seed) {
    require(pn.size() >= 1, "wasserstein_to_prechange: empty sample");
    require(pn.uniform(), "wasserstein_to_prechange: uniform sample weights only");
    require_dim(pn.dim(), q.dim(), "wasserstein_to_prechange");
    require(mc_size >= 1, "wasserstein_to_prechange: mc_size must be positive");
    const std::size_t reps = (std::max(mc_size, pn.size()) + pn.size() - 1) / pn.size();
    const std::size_t total = reps * pn.size();
    if (pn.dim() > 1) check_size(total, "wasserstein_to_prechange");
    Rng rng = make_rng(seed);
    const auto draws = sample_empirical(q, rng, total);
    std::vector<double> flat;
    flat.reserve(total * pn.dim());
    for (std::size_t r = 0; r < reps; ++r) flat.insert(flat.end(), pn.flat().begin(), pn.flat().end());
    const EmpiricalDistribution replicated(pn.dim(), std::move(flat));
    if (pn.dim() == 1) return wasserstein_1d_sorted(draws, replicated, metric.order_s);
    return wasserstein_discrete(draws, replicated, metric);
}

double wasserstein_between_models(const PreChangeModel& q, const PreChangeModel& p, const CostMetric& metric,
                                  std::size_t mc_size, std::uint64_t seed) {
    require_dim(p.dim(), q.dim(), "wasserstein_between_models");
    require(mc_size >= 1, "wasserstein_between_models: mc_size must be positive");
    if (q.dim() > 1) check_size(mc_size, "wasserstein_between_models");
    Rng rq = make_rng(seed, 0);
    Rng rp = make_rng(seed, 1);
    const auto a = sample_empirical(q, rq, mc_size);
    const auto b = sample_empirical(p, rp, mc_size);
    if (q.dim() == 1) return wasserstein_1d_sorted(a, b, metric.order_s);
    return wasserstein_discrete(a, b, metric);
}

double gaussian_w2(double mean0, double var0, double mean1, double var1) {
    require(var0 > 0.0 && var1 > 0.0, "gaussian_w2: variances must be positive");
    const double ds = std::sqrt(var0) - std::sqrt(var1);
    return std::sqrt((mean1 - mean0) * (mean1 - mean0) + ds * ds);
}

}  // namespace drcusum
