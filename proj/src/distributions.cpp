#include "drcusum/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "drcusum/error.hpp"

namespace drcusum {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void check_finite(const std::vector<double>& v, const char* what) {
    for (double c : v) {
        if (!std::isfinite(c)) fail(ErrorKind::InvalidArgument, std::string(what) + ": non-finite coordinate");
    }
}

}  // namespace

Observation::Observation(std::vector<double> coords) : coords_(std::move(coords)) {
    require(!coords_.empty(), "Observation: dimension must be at least 1");
    check_finite(coords_, "Observation");
}

CostMetric::CostMetric(double s, MetricKind k) : kind(k), order_s(s) {
    require(std::isfinite(s) && s >= 1.0, "CostMetric: order s must be >= 1");
}

double CostMetric::distance(ObsView x, ObsView y) const {
    require_dim(x.size(), y.size(), "cost_power");
    if (x.size() == 1) return std::abs(x[0] - y[0]);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

double cost_power(const CostMetric& metric, ObsView x, ObsView y) {
    require_dim(x.size(), y.size(), "cost_power");
    if (metric.order_s == 2.0) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - y[i];
            acc += d * d;
        }
        return acc;
    }
    const double r = metric.distance(x, y);
    return metric.order_s == 1.0 ? r : std::pow(r, metric.order_s);
}

// ---------------------------------------------------------------------------
// EmpiricalDistribution

EmpiricalDistribution::EmpiricalDistribution(const std::vector<Observation>& samples) {
    require(!samples.empty(), "EmpiricalDistribution: need at least one sample");
    dim_ = samples.front().dim();
    flat_.reserve(samples.size() * dim_);
    for (const auto& s : samples) {
        require_dim(s.dim(), dim_, "EmpiricalDistribution");
        flat_.insert(flat_.end(), s.coords().begin(), s.coords().end());
    }
    weights_.assign(samples.size(), 1.0 / static_cast<double>(samples.size()));
}

EmpiricalDistribution::EmpiricalDistribution(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), "EmpiricalDistribution: need at least one sample");
    dim_ = rows.front().size();
    require(dim_ >= 1, "EmpiricalDistribution: dimension must be at least 1");
    flat_.reserve(rows.size() * dim_);
    for (const auto& r : rows) {
        require_dim(r.size(), dim_, "EmpiricalDistribution");
        flat_.insert(flat_.end(), r.begin(), r.end());
    }
    check_finite(flat_, "EmpiricalDistribution");
    weights_.assign(rows.size(), 1.0 / static_cast<double>(rows.size()));
}

EmpiricalDistribution::EmpiricalDistribution(std::size_t dim, std::vector<double> flat)
    : dim_(dim), flat_(std::move(flat)) {
    require(dim_ >= 1, "EmpiricalDistribution: dimension must be at least 1");
    require(!flat_.empty() && flat_.size() % dim_ == 0, "EmpiricalDistribution: ragged sample storage");
    check_finite(flat_, "EmpiricalDistribution");
    const std::size_t n = flat_.size() / dim_;
    weights_.assign(n, 1.0 / static_cast<double>(n));
}

EmpiricalDistribution::EmpiricalDistribution(std::size_t dim, std::vector<double> flat, std::vector<double> weights)
    : dim_(dim), flat_(std::move(flat)), weights_(std::move(weights)), uniform_(false) {
    require(dim_ >= 1, "EmpiricalDistribution: dimension must be at least 1");
    require(!flat_.empty() && flat_.size() == weights_.size() * dim_, "EmpiricalDistribution: weight count mismatch");
    check_finite(flat_, "EmpiricalDistribution");
    double total = 0.0;
    for (double w : weights_) {
        require(std::isfinite(w) && w > 0.0, "EmpiricalDistribution: weights must be positive");
        total += w;
    }
    for (double& w : weights_) w /= total;
}

std::vector<std::vector<double>> EmpiricalDistribution::rows() const {
    std::vector<std::vector<double>> out;
    out.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) out.emplace_back(atom(i).begin(), atom(i).end());
    return out;
}

EmpiricalDistribution::Merged EmpiricalDistribution::merge_duplicates() const {
    std::map<std::vector<double>, std::size_t> seen;
    std::vector<double> flat;
    std::vector<double> weights;
    std::vector<std::size_t> index_map(size());
    for (std::size_t i = 0; i < size(); ++i) {
        std::vector<double> key(atom(i).begin(), atom(i).end());
        auto [it, inserted] = seen.emplace(key, weights.size());
        if (inserted) {
            flat.insert(flat.end(), key.begin(), key.end());
            weights.push_back(weight(i));
        } else {
            weights[it->second] += weight(i);
        }
        index_map[i] = it->second;
    }
    Merged m;
    if (weights.size() == size()) {
        m.distribution = *this;
    } else {
        m.distribution = EmpiricalDistribution(dim_, std::move(flat), std::move(weights));
    }
    m.index_map = std::move(index_map);
    return m;
}

// ---------------------------------------------------------------------------
// GenericDensity families

GenericDensity GenericDensity::beta(double a, double b) {
    require(a > 0.0 && b > 0.0, "beta: shape parameters must be positive");
    GenericDensity g;
    g.dim = 1;
    const double log_norm = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b);
    g.log_density = [a, b, log_norm](ObsView x) {
        const double v = x[0];
        if (v <= 0.0 || v >= 1.0) return -std::numeric_limits<double>::infinity();
        return log_norm + (a - 1.0) * std::log(v) + (b - 1.0) * std::log1p(-v);
    };
    g.sampler = [a, b](Rng& rng, std::span<double> out) {
        std::gamma_distribution<double> ga(a, 1.0);
        std::gamma_distribution<double> gb(b, 1.0);
        const double x = ga(rng);
        const double y = gb(rng);
        out[0] = x / (x + y);
    };
    g.support_lo = 0.0;
    g.support_hi = 1.0;
    g.location = a / (a + b);
    g.scale = std::sqrt(a * b / ((a + b) * (a + b) * (a + b + 1.0)));
    g.family = "beta";
    g.params = {a, b};
    return g;
}

// ---------------------------------------------------------------------------
// PreChangeModel

PreChangeModel::PreChangeModel(Gaussian1D g) {
    require(std::isfinite(g.mean), "Gaussian1D: mean must be finite");
    require(std::isfinite(g.variance) && g.variance > 0.0, "Gaussian1D: variance must be positive");
    v_ = std::make_shared<const Variant>(g);
    dim_ = 1;
}

PreChangeModel::PreChangeModel(GaussianDiag g) {
    require(!g.mean.empty() && g.mean.size() == g.variance.size(), "GaussianDiag: mean/variance size mismatch");
    for (std::size_t i = 0; i < g.mean.size(); ++i) {
        require(std::isfinite(g.mean[i]), "GaussianDiag: mean must be finite");
        require(std::isfinite(g.variance[i]) && g.variance[i] > 0.0, "GaussianDiag: variance must be positive");
    }
    dim_ = g.mean.size();
    v_ = std::make_shared<const Variant>(std::move(g));
}

PreChangeModel::PreChangeModel(GenericDensity g) {
    require(g.dim >= 1, "GenericDensity: dimension must be at least 1");
    require(static_cast<bool>(g.log_density), "GenericDensity: log-density callback required");
    require(static_cast<bool>(g.sampler), "GenericDensity: sampler callback required");
    require(g.scale > 0.0, "GenericDensity: scale must be positive");
    dim_ = g.dim;
    v_ = std::make_shared<const Variant>(std::move(g));
}

PreChangeModel::PreChangeModel(EmpiricalPreChange e) {
    require(e.samples.size() >= 1, "EmpiricalPreChange: need at least one sample");
    dim_ = e.samples.dim();
    v_ = std::make_shared<const Variant>(std::move(e));
}

double PreChangeModel::location() const {
    return std::visit(
        [](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Gaussian1D>) {
                return m.mean;
            } else if constexpr (std::is_same_v<T, GaussianDiag>) {
                return m.mean.front();
            } else if constexpr (std::is_same_v<T, GenericDensity>) {
                return m.location;
            } else {
                double acc = 0.0;
                for (std::size_t i = 0; i < m.samples.size(); ++i) acc += m.samples.atom(i)[0] * m.samples.weight(i);
                return acc;
            }
        },
        *v_);
}

double PreChangeModel::scale() const {
    return std::visit(
        [](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Gaussian1D>) {
                return std::sqrt(m.variance);
            } else if constexpr (std::is_same_v<T, GaussianDiag>) {
                return std::sqrt(*std::max_element(m.variance.begin(), m.variance.end()));
            } else if constexpr (std::is_same_v<T, GenericDensity>) {
                return m.scale;
            } else {
                return 1.0;
            }
        },
        *v_);
}

std::pair<double, double> PreChangeModel::support() const {
    if (const auto* g = std::get_if<GenericDensity>(v_.get())) return {g->support_lo, g->support_hi};
    const double inf = std::numeric_limits<double>::infinity();
    return {-inf, inf};
}

double PreChangeModel::log_density(ObsView x) const {
    require_dim(x.size(), dim_, "log_density");
    return std::visit(
        [&](const auto& m) -> double {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Gaussian1D>) {
                const double z = x[0] - m.mean;
                return -0.5 * (kLog2Pi + std::log(m.variance)) - 0.5 * z * z / m.variance;
            } else if constexpr (std::is_same_v<T, GaussianDiag>) {
                double acc = 0.0;
                for (std::size_t i = 0; i < m.mean.size(); ++i) {
                    const double z = x[i] - m.mean[i];
                    acc += -0.5 * (kLog2Pi + std::log(m.variance[i])) - 0.5 * z * z / m.variance[i];
                }
                return acc;
            } else if constexpr (std::is_same_v<T, GenericDensity>) {
                return m.log_density(x);
            } else {
                fail(ErrorKind::InvalidArgument,
                     "log_density: empirical pre-change model has no pointwise density; use the sample-average path");
            }
        },
        *v_);
}

void PreChangeModel::draw(Rng& rng, std::span<double> out) const {
    require_dim(out.size(), dim_, "draw");
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Gaussian1D>) {
                std::normal_distribution<double> nd(m.mean, std::sqrt(m.variance));
                out[0] = nd(rng);
            } else if constexpr (std::is_same_v<T, GaussianDiag>) {
                std::normal_distribution<double> nd(0.0, 1.0);
                for (std::size_t i = 0; i < m.mean.size(); ++i) out[i] = m.mean[i] + std::sqrt(m.variance[i]) * nd(rng);
            } else if constexpr (std::is_same_v<T, GenericDensity>) {
                m.sampler(rng, out);
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, m.samples.size() - 1);
                const auto a = m.samples.atom(pick(rng));
                std::copy(a.begin(), a.end(), out.begin());
            }
        },
        *v_);
}

std::string PreChangeModel::describe() const {
    std::ostringstream os;
    os.precision(17);
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Gaussian1D>) {
                os << "gaussian:mu=" << m.mean << ",var=" << m.variance;
            } else if constexpr (std::is_same_v<T, GaussianDiag>) {
                os << "diag:mu=";
                for (std::size_t i = 0; i < m.mean.size(); ++i) os << (i ? "|" : "") << m.mean[i];
                os << ",var=";
                for (std::size_t i = 0; i < m.variance.size(); ++i) os << (i ? "|" : "") << m.variance[i];
            } else if constexpr (std::is_same_v<T, GenericDensity>) {
                os << (m.family.empty() ? "generic" : m.family);
                for (std::size_t i = 0; i < m.params.size(); ++i) os << (i ? "," : ":") << m.params[i];
            } else {
                os << "empirical:N=" << m.samples.size() << ",d=" << m.samples.dim();
            }
        },
        *v_);
    return os.str();
}

void ModelSampler::operator()(Rng& rng, std::span<double> out) {
    require_dim(out.size(), model_.dim(), "draw");
    const auto& v = model_.variant();
    if (const auto* g = std::get_if<Gaussian1D>(&v)) {
        out[0] = g->mean + std::sqrt(g->variance) * normal_(rng);
    } else if (const auto* gd = std::get_if<GaussianDiag>(&v)) {
        for (std::size_t i = 0; i < gd->mean.size(); ++i) out[i] = gd->mean[i] + std::sqrt(gd->variance[i]) * normal_(rng);
    } else {
        model_.draw(rng, out);
    }
}

double log_density(const PreChangeModel& model, ObsView x) { return model.log_density(x); }

std::vector<Observation> sample(const PreChangeModel& model, std::uint64_t rng_seed, std::size_t count) {
    require(count >= 1, "sample: count must be at least 1");
    Rng rng = make_rng(rng_seed);
    ModelSampler draw(model);
    std::vector<Observation> out;
    out.reserve(count);
    std::vector<double> buf(model.dim());
    for (std::size_t i = 0; i < count; ++i) {
        draw(rng, buf);
        out.emplace_back(buf);
    }
    return out;
}

EmpiricalDistribution sample_empirical(const PreChangeModel& model, Rng& rng, std::size_t count) {
    require(count >= 1, "sample_empirical: count must be at least 1");
    ModelSampler draw(model);
    std::vector<double> flat(count * model.dim());
    for (std::size_t i = 0; i < count; ++i) draw(rng, {flat.data() + i * model.dim(), model.dim()});
    return EmpiricalDistribution(model.dim(), std::move(flat));
}

}  // namespace drcusum
