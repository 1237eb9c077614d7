#include "drcusum/lfd.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <tuple>

#include "drcusum/error.hpp"
#include "drcusum/io.hpp"
#include "drcusum/quadrature.hpp"

namespace drcusum {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_pdf(double z) { return std::isfinite(z) ? kInvSqrt2Pi * std::exp(-0.5 * z * z) : 0.0; }

// Phi(b) - Phi(a), evaluated on the side of the mean where erfc keeps
// relative precision.
double phi_interval(double a, double b) {
    if (!(b > a)) return 0.0;
    if (a >= 0.0) return 0.5 * (std::erfc(a * kInvSqrt2) - std::erfc(b * kInvSqrt2));
    if (b <= 0.0) return 0.5 * (std::erfc(-b * kInvSqrt2) - std::erfc(-a * kInvSqrt2));
    return 0.5 * (std::erf(b * kInvSqrt2) - std::erf(a * kInvSqrt2));
}

double z_pdf(double z) { return std::isfinite(z) ? z * normal_pdf(z) : 0.0; }

std::size_t argmax_lowest(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

double max_of(std::span<const double> v) { return v[argmax_lowest(v)]; }

// Collapse per-sample potentials onto merged atoms; duplicates contribute
// through min_i {lambda c - u_i}, so the merged potential is their maximum.
std::vector<double> merge_potentials(const std::vector<std::size_t>& index_map, std::span<const double> u, std::size_t k) {
    std::vector<double> out(k, -kInf);
    for (std::size_t i = 0; i < index_map.size(); ++i) out[index_map[i]] = std::max(out[index_map[i]], u[i]);
    return out;
}

void check_point(const DualPoint& point, const EmpiricalDistribution& training) {
    require(std::isfinite(point.lambda) && point.lambda >= 0.0, "dual point: lambda must be finite and >= 0");
    require(point.u.size() == training.size(), "dual point: u must have one entry per training sample");
    for (double v : point.u) require(std::isfinite(v), "dual point: u must be finite");
}

EtaMethod resolve_method(const PreChangeModel& q, const CostMetric& metric, EtaMethod requested) {
    const bool gaussian1d = std::holds_alternative<Gaussian1D>(q.variant());
    switch (requested) {
    case EtaMethod::Auto:
        if (gaussian1d && metric.order_s == 2.0) return EtaMethod::GaussianAnalytic;
        if (q.has_density() && q.dim() == 1) return EtaMethod::Quadrature;
        return EtaMethod::SampleAverage;
    case EtaMethod::GaussianAnalytic:
        require(gaussian1d && metric.order_s == 2.0, "GaussianAnalytic eta needs a Gaussian1D model and s = 2");
        return requested;
    case EtaMethod::Quadrature:
        require(q.has_density() && q.dim() == 1, "quadrature eta needs a 1-d density model");
        return requested;
    case EtaMethod::SampleAverage:
        return requested;
    }
    return requested;
}

// Lower envelope of f_i(x) = lambda |x - w_i|^s - u_i over [lo, hi] for 1-d
// atoms. Pairwise differences are monotone in x, so the winning atom index
// is non-decreasing in atom position and each atom owns at most one interval.
struct Cell {
    std::size_t atom;
    double a;
    double b;
};

std::vector<Cell> envelope_1d(const EmpiricalDistribution& atoms, double lambda, std::span<const double> u, double s,
                              double lo, double hi) {
    const std::size_t k = atoms.size();
    if (lambda == 0.0) return {Cell{argmax_lowest(u), lo, hi}};

    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return atoms.atom(a)[0] < atoms.atom(b)[0]; });

    auto f = [&](std::size_t i, double x) { return lambda * std::pow(std::abs(x - atoms.atom(i)[0]), s) - u[i]; };
    // First x in [lo, hi] where atom j (right of i) is strictly better than i;
    // -inf / +inf when that holds everywhere / nowhere on the window.
    auto crossing = [&](std::size_t i, std::size_t j) -> double {
        const double wi = atoms.atom(i)[0];
        const double wj = atoms.atom(j)[0];
        if (s == 2.0) return (u[i] - u[j]) / (2.0 * lambda * (wj - wi)) + 0.5 * (wi + wj);
        if (s == 1.0) {
            const double delta = u[i] - u[j];
            const double span = lambda * (wj - wi);
            if (delta < -span) return -kInf;
            if (delta >= span) return kInf;
            return 0.5 * (delta / lambda + wi + wj);
        }
        if (f(i, lo) - f(j, lo) > 0.0) return -kInf;
        if (f(i, hi) - f(j, hi) <= 0.0) return kInf;
        double a = lo, b = hi;
        for (int it = 0; it < 200 && b - a > 1e-15 * (1.0 + std::abs(a)); ++it) {
            const double m = 0.5 * (a + b);
            if (f(i, m) - f(j, m) > 0.0) b = m; else a = m;
        }
        return b;
    };

    std::vector<Cell> stack;
    for (std::size_t j : order) {
        double start = lo;
        while (!stack.empty()) {
            const double x = crossing(stack.back().atom, j);
            if (x <= stack.back().a) {
                stack.pop_back();
                continue;
            }
            start = x;
            break;
        }
        if (stack.empty()) start = lo;
        if (start >= hi) continue;
        stack.push_back(Cell{j, start, hi});
    }
    for (std::size_t c = 0; c + 1 < stack.size(); ++c) stack[c].b = stack[c + 1].a;
    if (!stack.empty()) stack.back().b = hi;
    return stack;
}

}  // namespace

// ---------------------------------------------------------------------------

double compute_C(const DualPoint& point, const CostMetric& metric, const EmpiricalDistribution& training, ObsView x) {
    require(point.u.size() == training.size(), "compute_C: u must have one entry per training sample");
    require_dim(x.size(), training.dim(), "compute_C");
    double best = kInf;
    for (std::size_t i = 0; i < training.size(); ++i) {
        const double v = point.lambda * cost_power(metric, x, training.atom(i)) - point.u[i];
        best = std::min(best, v);
    }
    return best;
}

double inner_min_oracle(std::span<const double> costs) {
    require(!costs.empty(), "inner_min_oracle: need at least one cost");
    return -std::exp(-*std::min_element(costs.begin(), costs.end()) - 1.0);
}

double closed_form_lambda_n1(double omega1, double radius) {
    require(std::isfinite(omega1), "closed_form_lambda_n1: omega must be finite");
    require(std::isfinite(radius) && radius > 0.0, "closed_form_lambda_n1: radius must be positive");
    // The textbook display writes the budget as "r"; matching the numeric
    // dual shows it is the squared W2 radius, i.e. the r^s term of the
    // program. (1 + sqrt(1 + 4 r2 w^2) - 2 r2) / (4 r2) is the same value as
    // w^2 / (sqrt(1 + 4 r2 w^2) - 1) - 1/2 without the 0/0 at w = 0.
    const double budget = radius * radius;
    if (budget >= 1.0 + omega1 * omega1) return 0.0;
    return (1.0 + std::sqrt(1.0 + 4.0 * budget * omega1 * omega1) - 2.0 * budget) / (4.0 * budget);
}

double eta_gaussian_analytic(const DualPoint& point, const EmpiricalDistribution& training, const Gaussian1D& gaussian) {
    check_point(point, training);
    require(training.dim() == 1, "eta_gaussian_analytic: 1-d data only");
    DualProblem problem(PreChangeModel(gaussian), CostMetric(2.0), training, 1.0,
                        SolveOptions{.method = EtaMethod::GaussianAnalytic});
    const auto u = merge_potentials(problem.index_map(), point.u, problem.atoms().size());
    return std::exp(problem.evaluate(point.lambda, u).log_eta);
}

double log_eta(const DualPoint& point, const PreChangeModel& prechange, const CostMetric& metric,
               const EmpiricalDistribution& training, EtaMethod method) {
    check_point(point, training);
    DualProblem problem(prechange, metric, training, 1.0, SolveOptions{.method = method});
    const auto u = merge_potentials(problem.index_map(), point.u, problem.atoms().size());
    return problem.evaluate(point.lambda, u).log_eta;
}

double eta(const DualPoint& point, const PreChangeModel& prechange, const CostMetric& metric,
           const EmpiricalDistribution& training, EtaMethod method) {
    return std::exp(log_eta(point, prechange, metric, training, method));
}

double dual_objective(const DualPoint& point, double radius, const PreChangeModel& prechange, const CostMetric& metric,
                      const EmpiricalDistribution& training, EtaMethod method) {
    require(std::isfinite(radius) && radius > 0.0, "dual_objective: radius must be positive");
    const double le = log_eta(point, prechange, metric, training, method);
    require(point.u.size() == training.size(), "dual_objective: one potential per training sample");
    double mean_u = 0.0;
    for (std::size_t i = 0; i < training.size(); ++i) mean_u += training.weight(i) * point.u[i];
    return -point.lambda * std::pow(radius, metric.order_s) + mean_u - le;
}

// ---------------------------------------------------------------------------
// DualProblem

DualProblem::DualProblem(PreChangeModel prechange, CostMetric metric, const EmpiricalDistribution& training,
                         double radius, const SolveOptions& opts)
    : prechange_(std::move(prechange)), metric_(metric), radius_(radius), quad_tol_(opts.quad_tol) {
    require(training.size() >= 1, "dual problem: need at least one training sample");
    require_dim(training.dim(), prechange_.dim(), "dual problem");
    require(std::isfinite(radius) && radius > 0.0, "dual problem: radius must be strictly positive");
    auto merged = training.merge_duplicates();
    atoms_ = std::move(merged.distribution);
    index_map_ = std::move(merged.index_map);
    budget_ = std::pow(radius_, metric_.order_s);
    method_ = resolve_method(prechange_, metric_, opts.method);

    if (method_ == EtaMethod::SampleAverage) {
        if (const auto* emp = std::get_if<EmpiricalPreChange>(&prechange_.variant())) {
            samples_ = emp->samples.flat();
            n_samples_ = emp->samples.size();
        } else {
            require(opts.mc_size >= 1, "dual problem: mc_size must be positive");
            Rng rng = make_rng(opts.mc_seed);
            auto draws = sample_empirical(prechange_, rng, opts.mc_size);
            samples_ = draws.flat();
            n_samples_ = draws.size();
        }
        const std::size_t k = atoms_.size();
        const std::size_t d = atoms_.dim();
        if (n_samples_ * k <= 16'000'000) {
            sample_costs_.resize(n_samples_ * k);
            for (std::size_t j = 0; j < n_samples_; ++j) {
                const ObsView x{samples_.data() + j * d, d};
                for (std::size_t i = 0; i < k; ++i) sample_costs_[j * k + i] = cost_power(metric_, x, atoms_.atom(i));
            }
        }
    }
}

DualProblem::Moments DualProblem::moments(double lambda, std::span<const double> u) const {
    switch (method_) {
    case EtaMethod::GaussianAnalytic: return moments_analytic(lambda, u);
    case EtaMethod::Quadrature: return moments_quadrature(lambda, u);
    default: return moments_samples(lambda, u);
    }
}

DualProblem::Moments DualProblem::moments_analytic(double lambda, std::span<const double> u) const {
    const auto& g = std::get<Gaussian1D>(prechange_.variant());
    const double sigma = std::sqrt(g.variance);
    const std::size_t k = atoms_.size();
    std::vector<double> w(k);
    for (std::size_t i = 0; i < k; ++i) w[i] = (atoms_.atom(i)[0] - g.mean) / sigma;
    const double lam = lambda * g.variance;

    Moments out;
    out.cell_mass.assign(k, 0.0);
    if (lam == 0.0) {
        const std::size_t a = argmax_lowest(u);
        out.log_eta = u[a];
        out.mean_cost = g.variance * (1.0 + w[a] * w[a]);
        out.cell_mass[a] = 1.0;
        return out;
    }

    const double t = 1.0 + 2.0 * lam;
    const double sqrt_t = std::sqrt(t);
    std::vector<double> log_mass(k, -kInf);
    std::vector<double> second(k, 0.0);  // E[(x' - w_i')^2 ; cell] / P(cell) under the tilted normal
    for (std::size_t i = 0; i < k; ++i) {
        double lo = -kInf;
        double hi = kInf;
        for (std::size_t j = 0; j < k; ++j) {
            if (j == i) continue;
            const double x = (u[i] - u[j]) / (2.0 * lam * (w[j] - w[i])) + 0.5 * (w[j] + w[i]);
            if (w[j] < w[i]) lo = std::max(lo, x); else hi = std::min(hi, x);
        }
        if (!(lo < hi)) continue;
        const double m = 2.0 * lam * w[i] / t;
        const double alpha = (lo - m) * sqrt_t;
        const double beta = (hi - m) * sqrt_t;
        const double dphi = phi_interval(alpha, beta);
        if (dphi <= 0.0) continue;
        log_mass[i] = u[i] - lam * w[i] * w[i] / t - 0.5 * std::log(t) + std::log(dphi);
        const double mu_y = m - w[i];
        const double sd = 1.0 / sqrt_t;
        const double e2 = mu_y * mu_y * dphi + 2.0 * mu_y * sd * (normal_pdf(alpha) - normal_pdf(beta)) +
                          sd * sd * (dphi + z_pdf(alpha) - z_pdf(beta));
        second[i] = e2 / dphi;
    }
    const double shift = max_of(log_mass);
    double total = 0.0;
    double cost = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (!std::isfinite(log_mass[i])) continue;
        const double mass = std::exp(log_mass[i] - shift);
        out.cell_mass[i] = mass;
        total += mass;
        cost += mass * second[i];
    }
    for (double& m : out.cell_mass) m /= total;
    out.log_eta = shift + std::log(total);
    out.mean_cost = g.variance * cost / total;
    return out;
}

DualProblem::Moments DualProblem::moments_quadrature(double lambda, std::span<const double> u) const {
    const double s = metric_.order_s;
    const std::size_t k = atoms_.size();
    const double scale = prechange_.scale();
    double lo_hint = prechange_.location();
    double hi_hint = lo_hint;
    for (std::size_t i = 0; i < k; ++i) {
        lo_hint = std::min(lo_hint, atoms_.atom(i)[0]);
        hi_hint = std::max(hi_hint, atoms_.atom(i)[0]);
    }
    auto [sup_lo, sup_hi] = prechange_.support();
    const double lo = std::isfinite(sup_lo) ? sup_lo : lo_hint - 10.0 * scale;
    const double hi = std::isfinite(sup_hi) ? sup_hi : hi_hint + 10.0 * scale;

    const auto cells = envelope_1d(atoms_, lambda, u, s, lo, hi);
    double h0 = 0.5 * scale;
    if (lambda > 0.0) h0 = std::min(h0, 0.5 * std::pow(lambda, -1.0 / s));

    auto log_integrand = [&](std::size_t atom, double x) {
        const double xv[1] = {x};
        const double c = std::pow(std::abs(x - atoms_.atom(atom)[0]), s);
        return std::pair{prechange_.log_density(xv) - lambda * c + u[atom], c};
    };

    struct Plan {
        Cell cell;
        std::size_t panels;
    };
    std::vector<Plan> plans;
    double shift = -kInf;
    for (const auto& c : cells) {
        const double width = c.b - c.a;
        if (!(width > 0.0)) continue;
        const auto panels = static_cast<std::size_t>(std::clamp(std::ceil(width / h0), 2.0, 20000.0));
        plans.push_back({c, panels});
        for (std::size_t p = 0; p <= 2 * panels; ++p) {
            const double x = c.a + width * static_cast<double>(p) / static_cast<double>(2 * panels);
            const double v = log_integrand(c.atom, x).first;
            if (std::isfinite(v)) shift = std::max(shift, v);
        }
    }
    if (!std::isfinite(shift)) fail(ErrorKind::Solver, "eta quadrature: integrand vanishes on the integration window");

    Moments out;
    out.cell_mass.assign(k, 0.0);
    double total = 0.0;
    double cost = 0.0;
    double err = 0.0;
    bool ok = true;
    const double tol = quad_tol_ / static_cast<double>(std::max<std::size_t>(plans.size(), 1));
    for (const auto& p : plans) {
        auto f = [&](double x) {
            const auto [li, c] = log_integrand(p.cell.atom, x);
            const double v = std::isfinite(li) ? std::exp(li - shift) : 0.0;
            return quad::Vec<2>{v, v * c};
        };
        quad::Result res;
        const auto r = quad::adaptive_simpson<2>(f, p.cell.a, p.cell.b, tol, p.panels, &res);
        ok = ok && res.converged;
        err += res.error_estimate;
        out.cell_mass[p.cell.atom] += r[0];
        total += r[0];
        cost += r[1];
    }
    if (!ok) {
        std::ostringstream os;
        os << "eta quadrature did not converge (error estimate " << err << " relative to mass " << total << ")";
        fail(ErrorKind::Solver, os.str());
    }
    for (double& m : out.cell_mass) m /= total;
    out.log_eta = shift + std::log(total);
    out.mean_cost = cost / total;
    return out;
}

DualProblem::Moments DualProblem::moments_samples(double lambda, std::span<const double> u) const {
    const std::size_t k = atoms_.size();
    const std::size_t d = atoms_.dim();
    std::vector<double> neg_c(n_samples_);
    std::vector<std::size_t> owner(n_samples_);
    std::vector<double> cost_of(n_samples_);
    double shift = -kInf;
    for (std::size_t j = 0; j < n_samples_; ++j) {
        double best = kInf;
        std::size_t arg = 0;
        double best_cost = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double c = sample_costs_.empty() ? cost_power(metric_, {samples_.data() + j * d, d}, atoms_.atom(i))
                                                   : sample_costs_[j * k + i];
            const double v = lambda * c - u[i];
            if (v < best) {
                best = v;
                arg = i;
                best_cost = c;
            }
        }
        neg_c[j] = -best;
        owner[j] = arg;
        cost_of[j] = best_cost;
        shift = std::max(shift, -best);
    }
    Moments out;
    out.cell_mass.assign(k, 0.0);
    double total = 0.0;
    double cost = 0.0;
    for (std::size_t j = 0; j < n_samples_; ++j) {
        const double e = std::exp(neg_c[j] - shift);
        total += e;
        cost += e * cost_of[j];
        out.cell_mass[owner[j]] += e;
    }
    for (double& m : out.cell_mass) m /= total;
    out.log_eta = shift + std::log(total / static_cast<double>(n_samples_));
    out.mean_cost = cost / total;
    return out;
}

DualProblem::Evaluation DualProblem::evaluate(double lambda, std::span<const double> u) const {
    require(u.size() == atoms_.size(), "dual problem: u has wrong length");
    const auto m = moments(lambda, u);
    Evaluation ev;
    ev.log_eta = m.log_eta;
    double mean_u = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) mean_u += atoms_.weight(i) * u[i];
    ev.objective = -lambda * budget_ + mean_u - m.log_eta;
    ev.grad_lambda = -budget_ + m.mean_cost;
    ev.grad_u.resize(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) ev.grad_u[i] = atoms_.weight(i) - m.cell_mass[i];
    return ev;
}

// ---------------------------------------------------------------------------
// Semi-discrete transport cost from Q to the atoms, used to detect radii at
// which Q itself lies in the ball.

DualProblem::Transport DualProblem::transport_moments(std::span<const double> phi) const {
    const std::size_t k = atoms_.size();
    Transport out;
    out.cell_mass.assign(k, 0.0);
    double expected_cost = 0.0;

    if (method_ == EtaMethod::GaussianAnalytic) {
        const auto& g = std::get<Gaussian1D>(prechange_.variant());
        const double sigma = std::sqrt(g.variance);
        std::vector<double> w(k), p(k);
        for (std::size_t i = 0; i < k; ++i) {
            w[i] = (atoms_.atom(i)[0] - g.mean) / sigma;
            p[i] = phi[i] / g.variance;
        }
        for (std::size_t i = 0; i < k; ++i) {
            double lo = -kInf, hi = kInf;
            for (std::size_t j = 0; j < k; ++j) {
                if (j == i) continue;
                const double x = (p[i] - p[j]) / (2.0 * (w[j] - w[i])) + 0.5 * (w[j] + w[i]);
                if (w[j] < w[i]) lo = std::max(lo, x); else hi = std::min(hi, x);
            }
            const double dphi = phi_interval(lo, hi);
            if (dphi <= 0.0) continue;
            out.cell_mass[i] = dphi;
            const double mu = -w[i];
            const double e2 = mu * mu * dphi + 2.0 * mu * (normal_pdf(lo) - normal_pdf(hi)) + dphi + z_pdf(lo) - z_pdf(hi);
            expected_cost += g.variance * e2;
        }
    } else if (method_ == EtaMethod::Quadrature) {
        const double s = metric_.order_s;
        double lo_hint = prechange_.location(), hi_hint = lo_hint;
        for (std::size_t i = 0; i < k; ++i) {
            lo_hint = std::min(lo_hint, atoms_.atom(i)[0]);
            hi_hint = std::max(hi_hint, atoms_.atom(i)[0]);
        }
        const auto [sup_lo, sup_hi] = prechange_.support();
        const double scale = prechange_.scale();
        const double lo = std::isfinite(sup_lo) ? sup_lo : lo_hint - 10.0 * scale;
        const double hi = std::isfinite(sup_hi) ? sup_hi : hi_hint + 10.0 * scale;
        for (const auto& c : envelope_1d(atoms_, 1.0, phi, s, lo, hi)) {
            if (!(c.b > c.a)) continue;
            const double w = atoms_.atom(c.atom)[0];
            auto f = [&](double x) {
                const double xv[1] = {x};
                const double lq = prechange_.log_density(xv);
                const double q = std::isfinite(lq) ? std::exp(lq) : 0.0;
                return quad::Vec<2>{q, q * std::pow(std::abs(x - w), s)};
            };
            const auto panels = static_cast<std::size_t>(std::clamp(std::ceil((c.b - c.a) / (0.5 * scale)), 2.0, 20000.0));
            const auto r = quad::adaptive_simpson<2>(f, c.a, c.b, quad_tol_, panels);
            out.cell_mass[c.atom] += r[0];
            expected_cost += r[1];
        }
    } else {
        const std::size_t d = atoms_.dim();
        const double inv_n = 1.0 / static_cast<double>(n_samples_);
        for (std::size_t j = 0; j < n_samples_; ++j) {
            double best = kInf, best_cost = 0.0;
            std::size_t arg = 0;
            for (std::size_t i = 0; i < k; ++i) {
                const double c = sample_costs_.empty() ? cost_power(metric_, {samples_.data() + j * d, d}, atoms_.atom(i))
                                                       : sample_costs_[j * k + i];
                if (c - phi[i] < best) {
                    best = c - phi[i];
                    arg = i;
                    best_cost = c;
                }
            }
            out.cell_mass[arg] += inv_n;
            expected_cost += best_cost * inv_n;
        }
    }

    out.value = expected_cost;
    for (std::size_t i = 0; i < k; ++i) out.value += (atoms_.weight(i) - out.cell_mass[i]) * phi[i];
    return out;
}

// ---------------------------------------------------------------------------

namespace {

struct AscentResult {
    std::vector<double> x;
    double objective = 0.0;
    double pg_norm = 0.0;
    int iterations = 0;
    StopReason stop = StopReason::IterationCap;
};

// Limited-memory BFGS ascent. Only coordinate 0 may be constrained (to be
// non-negative); it is held at its bound while the gradient pushes it outward.
template <class Eval>
AscentResult lbfgs_maximize(Eval&& eval, std::vector<double> x, bool nonneg_first, double tol, int max_iterations) {
    constexpr std::size_t kMemory = 20;
    const std::size_t dim = x.size();
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };
    auto [f, g] = eval(x);
    std::deque<std::vector<double>> mem_s, mem_y;
    std::vector<double> trace{f};
    AscentResult out;
    int it = 0;
    for (; it < max_iterations; ++it) {
        const bool pinned = nonneg_first && x[0] <= 0.0 && g[0] <= 0.0;
        double pg = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            const double step = (i == 0 && nonneg_first) ? std::max(x[0] + g[0], 0.0) - x[0] : g[i];
            pg += step * step;
        }
        out.pg_norm = std::sqrt(pg);
        if (out.pg_norm <= tol * (1.0 + std::abs(f))) {
            out.stop = StopReason::GradientTolerance;
            break;
        }

        // Two-loop recursion on the minimization of -f.
        std::vector<double> d(g);
        if (pinned) d[0] = 0.0;
        std::vector<double> alpha(mem_s.size());
        for (std::size_t k = mem_s.size(); k-- > 0;) {
            alpha[k] = dot(mem_s[k], d) / dot(mem_y[k], mem_s[k]);
            for (std::size_t i = 0; i < dim; ++i) d[i] -= alpha[k] * mem_y[k][i];
        }
        if (!mem_s.empty()) {
            const double scale = dot(mem_s.back(), mem_y.back()) / dot(mem_y.back(), mem_y.back());
            for (double& v : d) v *= scale;
        }
        for (std::size_t k = 0; k < mem_s.size(); ++k) {
            const double beta = dot(mem_y[k], d) / dot(mem_y[k], mem_s[k]);
            for (std::size_t i = 0; i < dim; ++i) d[i] += (alpha[k] - beta) * mem_s[k][i];
        }
        if (pinned) d[0] = 0.0;
        if (mem_s.empty()) {
            const double gn = std::sqrt(dot(g, g));
            if (gn > 1.0)
                for (double& v : d) v /= gn;
        }
        if (!(dot(g, d) > 0.0)) {
            mem_s.clear();
            mem_y.clear();
            d = g;
            if (pinned) d[0] = 0.0;
        }

        double t = 1.0;
        bool accepted = false;
        std::vector<double> xt(dim), gt;
        double ft = 0.0;
        while (t > 1e-20) {
            for (std::size_t i = 0; i < dim; ++i) xt[i] = x[i] + t * d[i];
            if (nonneg_first) xt[0] = std::max(xt[0], 0.0);
            std::tie(ft, gt) = eval(xt);
            double gain = 0.0;
            for (std::size_t i = 0; i < dim; ++i) gain += g[i] * (xt[i] - x[i]);
            if (ft >= f + 1e-4 * gain) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            if (!mem_s.empty()) {
                mem_s.clear();
                mem_y.clear();
                continue;
            }
            out.stop = StopReason::Stagnation;
            break;
        }
        std::vector<double> s(dim), y(dim);
        for (std::size_t i = 0; i < dim; ++i) {
            s[i] = xt[i] - x[i];
            y[i] = g[i] - gt[i];
        }
        if (dot(s, y) > 1e-16 * std::sqrt(dot(s, s) * dot(y, y))) {
            mem_s.push_back(std::move(s));
            mem_y.push_back(std::move(y));
            if (mem_s.size() > kMemory) {
                mem_s.pop_front();
                mem_y.pop_front();
            }
        }
        x = std::move(xt);
        f = ft;
        g = std::move(gt);
        trace.push_back(f);

        constexpr std::size_t kWindow = 50;
        if (trace.size() > kWindow) {
            const double gain = f - *std::max_element(trace.end() - kWindow - 1, trace.end() - 1);
            if (gain <= 1e-15 * (1.0 + std::abs(f))) {
                out.stop = StopReason::Stagnation;
                ++it;
                break;
            }
        }
    }
    out.iterations = it;
    out.x = std::move(x);
    out.objective = f;
    return out;
}

}  // namespace

double DualProblem::transport_cost(double tol, int max_iterations) const {
    const std::size_t k = atoms_.size();
    if (k == 1) return transport_moments(std::vector<double>{0.0}).value;
    auto eval = [&](const std::vector<double>& phi) {
        const auto t = transport_moments(phi);
        std::vector<double> g(k);
        for (std::size_t i = 0; i < k; ++i) g[i] = atoms_.weight(i) - t.cell_mass[i];
        return std::pair{t.value, std::move(g)};
    };
    return lbfgs_maximize(eval, std::vector<double>(k, 0.0), false, tol, max_iterations).objective;
}

DualSolution solve_dual(const PreChangeModel& prechange, const CostMetric& metric, const EmpiricalDistribution& training,
                        double radius, const SolveOptions& opts) {
    require(opts.tol > 0.0 && opts.max_iterations >= 1, "solve_dual: invalid options");
    require(opts.lambda0 >= 0.0, "solve_dual: lambda0 must be >= 0");
    DualProblem problem(prechange, metric, training, radius, opts);
    const std::size_t k = problem.atoms().size();
    const double budget = problem.budget();

    DualSolution sol;
    sol.point.u.assign(training.size(), 0.0);

    // The multiplier is zero exactly when Q is within the ball; the transport
    // dual is a lower bound on W_s^s(Q, P_n), so exceeding the budget at any
    // iterate rules that out.
    if (problem.transport_cost(opts.tol, opts.max_iterations) <= budget) {
        sol.converged = true;
        sol.stop = StopReason::GradientTolerance;
        return sol;
    }

    // Coordinate 0 carries lambda * r^s, which puts the multiplier on the same
    // scale as the potentials; without it small radii are badly conditioned.
    auto eval = [&](const std::vector<double>& x) {
        const auto ev = problem.evaluate(x[0] / budget, std::span<const double>(x).subspan(1));
        if (!std::isfinite(ev.objective) || !std::isfinite(ev.grad_lambda)) {
            std::ostringstream os;
            os.precision(17);
            os << "solve_dual: non-finite objective at lambda=" << x[0] / budget << " u=[";
            for (std::size_t i = 1; i < x.size(); ++i) os << (i > 1 ? "," : "") << x[i];
            os << "]";
            fail(ErrorKind::Solver, os.str());
        }
        std::vector<double> g(k + 1);
        g[0] = ev.grad_lambda / budget;
        std::copy(ev.grad_u.begin(), ev.grad_u.end(), g.begin() + 1);
        return std::pair{ev.objective, std::move(g)};
    };
    std::vector<double> x0(k + 1, 0.0);
    x0[0] = opts.lambda0 * budget;
    auto res = lbfgs_maximize(eval, std::move(x0), true, opts.tol, opts.max_iterations);

    // (lambda, u) = (0, 0) attains 0; prefer it over a slightly negative iterate.
    if (res.objective < 0.0) {
        res.x.assign(k + 1, 0.0);
        res.objective = 0.0;
    }

    sol.point.lambda = res.x[0] / budget;
    for (std::size_t i = 0; i < training.size(); ++i) sol.point.u[i] = res.x[1 + problem.index_map()[i]];
    sol.log_eta = problem.evaluate(sol.point.lambda, std::span<const double>(res.x).subspan(1)).log_eta;
    double mean_u = 0.0;
    for (std::size_t i = 0; i < training.size(); ++i) mean_u += training.weight(i) * sol.point.u[i];
    sol.dual_value = -sol.point.lambda * budget + mean_u - sol.log_eta;
    sol.iterations = res.iterations;
    sol.stop = res.stop;
    sol.converged = res.stop != StopReason::IterationCap;
    sol.gradient_norm = res.pg_norm;
    return sol;
}

// ---------------------------------------------------------------------------
// LfdScorer

LfdScorer::LfdScorer(PreChangeModel prechange, EmpiricalDistribution training, CostMetric metric, double radius,
                     DualSolution solution)
    : prechange_(std::move(prechange)),
      training_(std::move(training)),
      metric_(metric),
      radius_(radius),
      solution_(std::move(solution)) {
    require(training_.size() >= 1, "LfdScorer: empty training set");
    require_dim(training_.dim(), prechange_.dim(), "LfdScorer");
    require(std::isfinite(radius_) && radius_ > 0.0, "LfdScorer: radius must be positive");
    check_point(solution_.point, training_);
    require(std::isfinite(solution_.log_eta), "LfdScorer: log_eta must be finite");
}

LfdScorer LfdScorer::fit(PreChangeModel prechange, EmpiricalDistribution training, CostMetric metric, double radius,
                         const SolveOptions& opts) {
    auto sol = solve_dual(prechange, metric, training, radius, opts);
    return LfdScorer(std::move(prechange), std::move(training), metric, radius, std::move(sol));
}

double LfdScorer::llr(ObsView x) const {
    require_dim(x.size(), training_.dim(), "llr");
    const auto& p = solution_.point;
    double best = kInf;
    if (training_.dim() == 1 && metric_.order_s == 2.0) {
        const double* w = training_.flat().data();
        for (std::size_t i = 0; i < p.u.size(); ++i) {
            const double d = x[0] - w[i];
            best = std::min(best, p.lambda * d * d - p.u[i]);
        }
    } else {
        for (std::size_t i = 0; i < p.u.size(); ++i)
            best = std::min(best, p.lambda * cost_power(metric_, x, training_.atom(i)) - p.u[i]);
    }
    return -best - solution_.log_eta;
}

double LfdScorer::lfd_log_density(ObsView x) const {
    if (!prechange_.has_density())
        fail(ErrorKind::InvalidArgument, "lfd_log_density: empirical pre-change model has no pointwise density; use llr");
    const double lq = prechange_.log_density(x);
    if (!std::isfinite(lq)) return lq;
    return lq + llr(x);
}

double llr(const LfdScorer& scorer, ObsView x) { return scorer.llr(x); }
double lfd_log_density(const LfdScorer& scorer, ObsView x) { return scorer.lfd_log_density(x); }

nlohmann::json LfdScorer::to_json() const {
    nlohmann::json j;
    j["format"] = "drcusum.lfd/1";
    j["lambda"] = solution_.point.lambda;
    j["u"] = solution_.point.u;
    j["log_eta"] = solution_.log_eta;
    j["dual_value"] = solution_.dual_value;
    j["radius"] = radius_;
    j["order_s"] = metric_.order_s;
    j["metric"] = "euclidean";
    j["training_samples"] = training_.rows();
    j["prechange"] = model_to_json(prechange_);
    j["iterations"] = solution_.iterations;
    j["converged"] = solution_.converged;
    return j;
}

LfdScorer LfdScorer::from_json(const nlohmann::json& j) {
    try {
        if (j.at("format").get<std::string>() != "drcusum.lfd/1") fail(ErrorKind::Data, "scorer JSON: unknown format");
        if (j.value("metric", std::string("euclidean")) != "euclidean") fail(ErrorKind::Data, "scorer JSON: unknown metric");
        DualSolution sol;
        sol.point.lambda = j.at("lambda").get<double>();
        sol.point.u = j.at("u").get<std::vector<double>>();
        sol.log_eta = j.at("log_eta").get<double>();
        sol.dual_value = j.value("dual_value", 0.0);
        sol.iterations = j.value("iterations", 0);
        sol.converged = j.value("converged", true);
        sol.stop = sol.converged ? StopReason::GradientTolerance : StopReason::IterationCap;
        EmpiricalDistribution training(j.at("training_samples").get<std::vector<std::vector<double>>>());
        return LfdScorer(model_from_json(j.at("prechange")), std::move(training), CostMetric(j.at("order_s").get<double>()),
                         j.at("radius").get<double>(), std::move(sol));
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Data, std::string("scorer JSON: ") + e.what());
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::InvalidArgument || e.kind() == ErrorKind::DimensionMismatch)
            fail(ErrorKind::Data, std::string("scorer JSON: ") + e.what());
        throw;
    }
}

PreChangeModel lfd_model(std::shared_ptr<const LfdScorer> scorer) {
    require(scorer != nullptr, "lfd_model: null scorer");
    const auto& q = scorer->prechange();
    GenericDensity g;
    g.dim = q.dim();
    g.log_density = [scorer](ObsView x) { return scorer->lfd_log_density(x); };
    const double max_u = max_of(scorer->solution().point.u);
    g.sampler = [scorer, q, max_u](Rng& rng, std::span<double> out) {
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        for (long attempt = 0; attempt < 100'000'000L; ++attempt) {
            q.draw(rng, out);
            const double log_accept = -compute_C(scorer->solution().point, scorer->metric(), scorer->training(), out) - max_u;
            if (std::log(unif(rng)) < log_accept) return;
        }
        fail(ErrorKind::Solver, "lfd sampler: rejection sampling failed to accept");
    };
    auto [lo, hi] = q.support();
    g.support_lo = lo;
    g.support_hi = hi;
    g.location = q.location();
    g.scale = q.scale();
    return PreChangeModel(std::move(g));
}

}  // namespace drcusum
