#include "drcusum/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "drcusum/error.hpp"

namespace drcusum {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;

double log_kernel(ObsView a, ObsView b, const std::vector<double>& h) {
    double acc = 0.0;
    for (std::size_t m = 0; m < a.size(); ++m) {
        const double z = (a[m] - b[m]) / h[m];
        acc -= 0.5 * z * z + kLogSqrt2Pi;
    }
    return acc;
}

void check_bandwidths(const std::vector<double>& h, std::size_t dim) {
    require_dim(h.size(), dim, "KDE bandwidths");
    for (double v : h) require(std::isfinite(v) && v > 0.0, "KDE bandwidths must be positive");
}

double log_h_prod(const std::vector<double>& h) {
    double s = 0.0;
    for (double v : h) s += std::log(v);
    return s;
}

}  // namespace

double exact_cusum_llr(const PreChangeModel& q, const PreChangeModel& p, ObsView x) {
    require_dim(p.dim(), q.dim(), "exact_cusum_llr");
    return p.log_density(x) - q.log_density(x);
}

ExactCusumScorer::ExactCusumScorer(PreChangeModel q, PreChangeModel p) : q_(std::move(q)), p_(std::move(p)) {
    require(q_.has_density() && p_.has_density(), "exact CuSum needs evaluable densities");
    require_dim(p_.dim(), q_.dim(), "ExactCusumScorer");
}

PreChangeModel GaussianMleFit::model() const {
    if (mean.size() == 1) return PreChangeModel::gaussian(mean[0], variance[0]);
    return PreChangeModel(GaussianDiag{mean, variance});
}

GaussianMleFit fit_gaussian_mle(const EmpiricalDistribution& training) {
    const std::size_t n = training.size();
    const std::size_t d = training.dim();
    require(n >= 2, "Gaussian MLE needs at least two samples");
    GaussianMleFit fit{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < d; ++m) fit.mean[m] += training.atom(i)[m];
    for (double& v : fit.mean) v /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t m = 0; m < d; ++m) {
            const double e = training.atom(i)[m] - fit.mean[m];
            fit.variance[m] += e * e;
        }
    for (double& v : fit.variance) {
        v /= static_cast<double>(n);
        if (!(v > 0.0)) fail(ErrorKind::Data, "Gaussian MLE: degenerate (zero-variance) training coordinate");
    }
    return fit;
}

GaussianMleScorer::GaussianMleScorer(PreChangeModel q, const GaussianMleFit& fit) : inner_(std::move(q), fit.model()) {}

std::vector<double> bandwidth_rule(std::size_t window, const std::vector<double>& sigma) {
    require(window >= 2, "bandwidth_rule: window must be >= 2");
    require(!sigma.empty(), "bandwidth_rule: need at least one coordinate");
    const double factor = std::pow(static_cast<double>(window), -1.0 / (static_cast<double>(sigma.size()) + 4.0));
    std::vector<double> h(sigma.size());
    for (std::size_t m = 0; m < sigma.size(); ++m) {
        if (!(std::isfinite(sigma[m]) && sigma[m] > 0.0)) fail(ErrorKind::Data, "bandwidth_rule: zero spread in coordinate");
        h[m] = factor * sigma[m];
    }
    return h;
}

std::vector<double> bandwidth_rule(std::size_t window, std::size_t dim, const EmpiricalDistribution& samples) {
    require_dim(samples.dim(), dim, "bandwidth_rule");
    require(samples.size() >= 2, "bandwidth_rule: need at least two samples");
    const double n = static_cast<double>(samples.size());
    std::vector<double> sigma(dim, 0.0);
    for (std::size_t m = 0; m < dim; ++m) {
        double mean = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) mean += samples.atom(i)[m];
        mean /= n;
        double ss = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) ss += (samples.atom(i)[m] - mean) * (samples.atom(i)[m] - mean);
        sigma[m] = std::sqrt(ss / (n - 1.0));
    }
    return bandwidth_rule(window, sigma);
}

double kde_loo_density(const std::vector<Observation>& window, std::optional<std::size_t> exclude,
                       const EmpiricalDistribution& training, const std::vector<double>& bandwidths, ObsView x) {
    const std::size_t d = x.size();
    check_bandwidths(bandwidths, d);
    require_dim(training.dim(), d, "kde_loo_density");
    require(!exclude || *exclude < window.size(), "kde_loo_density: excluded index out of range");
    const std::size_t count = window.size() - (exclude ? 1 : 0) + training.size();
    if (count == 0) fail(ErrorKind::InvalidArgument, "kde_loo_density: no contributors");
    double sum = 0.0;
    for (std::size_t a = 0; a < window.size(); ++a) {
        if (exclude && a == *exclude) continue;
        require_dim(window[a].dim(), d, "kde_loo_density");
        sum += std::exp(log_kernel(x, window[a].view(), bandwidths));
    }
    for (std::size_t i = 0; i < training.size(); ++i) sum += std::exp(log_kernel(x, training.atom(i), bandwidths));
    return sum / (static_cast<double>(count) * std::exp(log_h_prod(bandwidths)));
}

double nglr_statistic(const std::vector<Observation>& history, const EmpiricalDistribution& training,
                      const KdeConfig& config, const PreChangeModel& q) {
    const std::size_t k = history.size();
    require(k >= 1, "nglr_statistic: need at least one observation");
    require(config.window >= 2, "nglr_statistic: window must be >= 2");
    const std::size_t first = k > config.window ? k - config.window : 0;  // 0-based start of the earliest window
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t l = first; l < k; ++l) {
        const std::vector<Observation> window(history.begin() + static_cast<std::ptrdiff_t>(l), history.end());
        double total = 0.0;
        for (std::size_t j = 0; j < window.size(); ++j)
            total += std::log(kde_loo_density(window, j, training, config.bandwidths, window[j].view())) -
                     q.log_density(window[j].view());
        for (std::size_t i = 0; i < training.size(); ++i)
            total += std::log(kde_loo_density(window, std::nullopt, training, config.bandwidths, training.atom(i))) -
                     q.log_density(training.atom(i));
        best = std::max(best, total);
    }
    return best;
}

NglrStatistic::NglrStatistic(PreChangeModel q, EmpiricalDistribution training, KdeConfig config)
    : q_(std::move(q)), training_(std::move(training)), config_(std::move(config)) {
    require(q_.has_density(), "NGLR needs an evaluable pre-change density");
    require(training_.size() >= 1, "NGLR needs training samples");
    require_dim(training_.dim(), q_.dim(), "NglrStatistic");
    require(config_.window >= 2, "NGLR window must be >= 2");
    check_bandwidths(config_.bandwidths, training_.dim());
    log_h_prod_ = log_h_prod(config_.bandwidths);
    const std::size_t n = training_.size();
    train_self_.assign(n, 0.0);
    train_log_q_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) train_self_[i] += kernel(training_.atom(i), training_.atom(j));
        train_log_q_[i] = q_.log_density(training_.atom(i));
    }
}

double NglrStatistic::kernel(ObsView a, ObsView b) const { return std::exp(log_kernel(a, b, config_.bandwidths)); }

void NglrStatistic::reset() { window_.clear(); }

double NglrStatistic::update(ObsView x) {
    require_dim(x.size(), training_.dim(), "NglrStatistic");
    const std::size_t n = training_.size();
    Entry e;
    e.x.assign(x.begin(), x.end());
    e.log_q = q_.log_density(x);
    e.train_row.resize(n);
    e.train_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        e.train_row[i] = kernel(training_.atom(i), x);
        e.train_sum += e.train_row[i];
    }
    if (window_.size() == config_.window) window_.pop_front();
    e.window_row.resize(window_.size());
    for (std::size_t a = 0; a < window_.size(); ++a) e.window_row[a] = kernel(x, window_[window_.size() - 1 - a].x);
    window_.push_back(std::move(e));

    // Grow the window backwards from the newest point; peer[j] holds the
    // kernel mass from other window members on point j (indexed from the
    // newest), train_mass[i] the window's mass on training atom i.
    const std::size_t len = window_.size();
    auto pair_kernel = [&](std::size_t newer, std::size_t older) {
        // positions counted back from the newest entry, newer < older
        return window_[len - 1 - newer].window_row[older - newer - 1];
    };
    std::vector<double> peer(len, 0.0);
    std::vector<double> train_mass(train_self_);
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t size = 1; size <= len; ++size) {
        const std::size_t added = size - 1;
        const Entry& add = window_[len - 1 - added];
        for (std::size_t j = 0; j < added; ++j) {
            const double kv = pair_kernel(j, added);
            peer[j] += kv;
            peer[added] += kv;
        }
        for (std::size_t i = 0; i < n; ++i) train_mass[i] += add.train_row[i];

        const double log_norm_loo = std::log(static_cast<double>(size - 1 + n)) + log_h_prod_;
        const double log_norm_full = std::log(static_cast<double>(size + n)) + log_h_prod_;
        double total = 0.0;
        for (std::size_t j = 0; j < size; ++j) {
            const Entry& ej = window_[len - 1 - j];
            total += std::log(peer[j] + ej.train_sum) - log_norm_loo - ej.log_q;
        }
        for (std::size_t i = 0; i < n; ++i) total += std::log(train_mass[i]) - log_norm_full - train_log_q_[i];
        best = std::max(best, total);
    }
    return best;
}

}  // namespace drcusum
