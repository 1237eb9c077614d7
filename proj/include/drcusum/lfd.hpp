#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "drcusum/distributions.hpp"
#include "drcusum/scorer.hpp"

namespace drcusum {

// Dual variables of the least-favorable-distribution program: a multiplier
// for the transport budget and one potential per training atom.
struct DualPoint {
    double lambda = 0.0;
    std::vector<double> u;
};

// How the normalizer eta(lambda, u) = E_q[exp(-C(X))] is evaluated.
//  Auto             Gaussian1D with s = 2 -> GaussianAnalytic; other 1-d
//                   densities -> Quadrature; d > 1 densities and empirical
//                   pre-change models -> SampleAverage.
//  Quadrature       adaptive Simpson over the cells of the lower envelope.
//  GaussianAnalytic closed form via interval decomposition and erf.
//  SampleAverage    mean of exp(-C) over stored pre-change samples, or over a
//                   fixed seeded batch of model draws.
enum class EtaMethod { Auto, Quadrature, GaussianAnalytic, SampleAverage };

enum class StopReason { GradientTolerance, Stagnation, IterationCap };

struct SolveOptions {
    double tol = 1e-8;
    int max_iterations = 10000;
    double lambda0 = 1.0;
    EtaMethod method = EtaMethod::Auto;
    std::size_t mc_size = 200000;
    std::uint64_t mc_seed = 0x6c6664ULL;
    double quad_tol = 1e-10;
};

struct DualSolution {
    DualPoint point;  // u has one entry per original (unmerged) training sample
    double log_eta = 0.0;
    double dual_value = 0.0;  // = KL(P* || Q) at the optimum
    int iterations = 0;
    bool converged = false;
    StopReason stop = StopReason::IterationCap;
    double gradient_norm = 0.0;
};

// C_{lambda,u}(x) = min_i { lambda c^s(x, w_i) - u_i }
double compute_C(const DualPoint& point, const CostMetric& metric, const EmpiricalDistribution& training, ObsView x);

double eta(const DualPoint& point, const PreChangeModel& prechange, const CostMetric& metric,
           const EmpiricalDistribution& training, EtaMethod method = EtaMethod::Auto);
double log_eta(const DualPoint& point, const PreChangeModel& prechange, const CostMetric& metric,
               const EmpiricalDistribution& training, EtaMethod method = EtaMethod::Auto);

// Closed-form eta for 1-d data, s = 2 and a Gaussian pre-change model. The
// data are standardized by the model's mean and scale internally.
double eta_gaussian_analytic(const DualPoint& point, const EmpiricalDistribution& training, const Gaussian1D& gaussian);

double dual_objective(const DualPoint& point, double radius, const PreChangeModel& prechange, const CostMetric& metric,
                      const EmpiricalDistribution& training, EtaMethod method = EtaMethod::Auto);

DualSolution solve_dual(const PreChangeModel& prechange, const CostMetric& metric, const EmpiricalDistribution& training,
                        double radius, const SolveOptions& opts = {});

// Optimal multiplier for one training atom, Q = N(0,1), s = 2. `radius` is
// the Wasserstein-2 radius r; the budget entering the program is r^2, and the
// tilt is active only while r^2 < 1 + omega1^2 (beyond that Q itself lies in
// the ball and the multiplier is 0).
double closed_form_lambda_n1(double omega1, double radius);

// Optimal value of min_{a >= 0} (sum a) log(sum a) + sum c_i a_i, which is
// -exp(-min c - 1).
double inner_min_oracle(std::span<const double> costs);

// Evaluates the dual objective and its gradient on the merged atom set. Used
// by solve_dual; exposed for tests of the optimizer's building blocks.
class DualProblem {
public:
    DualProblem(PreChangeModel prechange, CostMetric metric, const EmpiricalDistribution& training, double radius,
                const SolveOptions& opts = {});

    struct Evaluation {
        double objective = 0.0;
        double log_eta = 0.0;
        double grad_lambda = 0.0;
        std::vector<double> grad_u;
    };

    // `u` indexes merged atoms.
    Evaluation evaluate(double lambda, std::span<const double> u) const;

    const EmpiricalDistribution& atoms() const noexcept { return atoms_; }
    const std::vector<std::size_t>& index_map() const noexcept { return index_map_; }
    EtaMethod method() const noexcept { return method_; }
    double budget() const noexcept { return budget_; }

    // W_s^s(Q, atoms) via the semi-discrete transport dual, evaluated with
    // the same eta method as the LFD program.
    double transport_cost(double tol = 1e-8, int max_iterations = 10000) const;

private:
    struct Moments {
        double log_eta;
        double mean_cost;             // E_p[c^s(x, w_{i(x)})]
        std::vector<double> cell_mass;  // P_p(cell i)
    };
    struct Transport {
        double value;
        std::vector<double> cell_mass;
    };
    Transport transport_moments(std::span<const double> phi) const;
    Moments moments(double lambda, std::span<const double> u) const;
    Moments moments_analytic(double lambda, std::span<const double> u) const;
    Moments moments_quadrature(double lambda, std::span<const double> u) const;
    Moments moments_samples(double lambda, std::span<const double> u) const;

    PreChangeModel prechange_;
    CostMetric metric_;
    EmpiricalDistribution atoms_;
    std::vector<std::size_t> index_map_;
    double radius_;
    double budget_;  // radius^s
    EtaMethod method_;
    double quad_tol_;
    // SampleAverage state
    std::vector<double> samples_;  // N x d
    std::size_t n_samples_ = 0;
    std::vector<double> sample_costs_;  // N x k, empty when computed on the fly
};

class LfdScorer final : public LlrScorer {
public:
    LfdScorer(PreChangeModel prechange, EmpiricalDistribution training, CostMetric metric, double radius,
              DualSolution solution);

    static LfdScorer fit(PreChangeModel prechange, EmpiricalDistribution training, CostMetric metric, double radius,
                         const SolveOptions& opts = {});

    double llr(ObsView x) const override;
    std::size_t dim() const override { return training_.dim(); }

    // log q(x) + llr(x); unavailable for empirical pre-change models.
    double lfd_log_density(ObsView x) const;

    const PreChangeModel& prechange() const noexcept { return prechange_; }
    const EmpiricalDistribution& training() const noexcept { return training_; }
    const CostMetric& metric() const noexcept { return metric_; }
    double radius() const noexcept { return radius_; }
    const DualSolution& solution() const noexcept { return solution_; }

    nlohmann::json to_json() const;
    static LfdScorer from_json(const nlohmann::json& j);

private:
    PreChangeModel prechange_;
    EmpiricalDistribution training_;
    CostMetric metric_;
    double radius_;
    DualSolution solution_;
};

double llr(const LfdScorer& scorer, ObsView x);
double lfd_log_density(const LfdScorer& scorer, ObsView x);

// The least-favorable distribution as a sampleable model. Draws use rejection
// from the pre-change model with acceptance probability exp(-C(x) - max u),
// which is p*(x) / (M q(x)) for the envelope constant M = exp(max u - log eta).
PreChangeModel lfd_model(std::shared_ptr<const LfdScorer> scorer);

}  // namespace drcusum
