#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <vector>

#include "drcusum/detector.hpp"
#include "drcusum/distributions.hpp"
#include "drcusum/scorer.hpp"

namespace drcusum {

// log p(x) - log q(x) for two evaluable densities.
double exact_cusum_llr(const PreChangeModel& q, const PreChangeModel& p, ObsView x);

class ExactCusumScorer final : public LlrScorer {
public:
    ExactCusumScorer(PreChangeModel q, PreChangeModel p);
    double llr(ObsView x) const override { return exact_cusum_llr(q_, p_, x); }
    std::size_t dim() const override { return q_.dim(); }

private:
    PreChangeModel q_;
    PreChangeModel p_;
};

struct GaussianMleFit {
    std::vector<double> mean;
    std::vector<double> variance;  // 1/n convention

    PreChangeModel model() const;
};

GaussianMleFit fit_gaussian_mle(const EmpiricalDistribution& training);

class GaussianMleScorer final : public LlrScorer {
public:
    GaussianMleScorer(PreChangeModel q, const GaussianMleFit& fit);
    double llr(ObsView x) const override { return inner_.llr(x); }
    std::size_t dim() const override { return inner_.dim(); }

private:
    ExactCusumScorer inner_;
};

struct KdeConfig {
    std::vector<double> bandwidths;  // one per coordinate
    std::size_t window = 50;
};

// W^{-1/(d+4)} * sigma_i, with sigma_i the per-coordinate sample standard
// deviation of `samples`.
std::vector<double> bandwidth_rule(std::size_t window, std::size_t dim, const EmpiricalDistribution& samples);
std::vector<double> bandwidth_rule(std::size_t window, const std::vector<double>& sigma);

// Product Gaussian kernel estimate at x from the window points (minus the
// one at `exclude`, if given) and every training atom, normalized by the
// contributor count times the bandwidth product.
double kde_loo_density(const std::vector<Observation>& window, std::optional<std::size_t> exclude,
                       const EmpiricalDistribution& training, const std::vector<double>& bandwidths, ObsView x);

// Modified NGLR statistic at time k = history.size(), computed directly:
//   max over window starts l in ((k - W)^+, k] of
//     sum_{j=l..k} log(p_{-j}(X_j) / q(X_j)) + sum_i log(p(w_i) / q(w_i)),
// where p_{-j} leaves X_j out of the window and p at a training atom uses the
// whole window and all training atoms.
double nglr_statistic(const std::vector<Observation>& history, const EmpiricalDistribution& training,
                      const KdeConfig& config, const PreChangeModel& q);

// Incremental form of nglr_statistic with cached kernel rows; O(W^2 + W n)
// per step.
class NglrStatistic final : public Statistic {
public:
    NglrStatistic(PreChangeModel q, EmpiricalDistribution training, KdeConfig config);
    double update(ObsView x) override;
    void reset() override;
    std::size_t dim() const override { return training_.dim(); }

private:
    double kernel(ObsView a, ObsView b) const;

    struct Entry {
        std::vector<double> x;
        double log_q;
        double train_sum;                 // sum_i K(x, w_i)
        std::vector<double> train_row;    // K(w_i, x)
        std::vector<double> window_row;   // K(x, older entries), most recent first
    };

    PreChangeModel q_;
    EmpiricalDistribution training_;
    KdeConfig config_;
    double log_h_prod_ = 0.0;
    std::vector<double> train_self_;  // sum_{i'} K(w_i, w_i')
    std::vector<double> train_log_q_;
    std::deque<Entry> window_;
};

}  // namespace drcusum
