#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "drcusum/rng.hpp"

namespace drcusum {

using ObsView = std::span<const double>;

// A point of R^d with finite coordinates.
class Observation {
public:
    Observation() = default;
    explicit Observation(std::vector<double> coords);
    Observation(std::initializer_list<double> coords) : Observation(std::vector<double>(coords)) {}

    std::size_t dim() const noexcept { return coords_.size(); }
    ObsView view() const noexcept { return coords_; }
    const std::vector<double>& coords() const noexcept { return coords_; }
    double operator[](std::size_t i) const { return coords_[i]; }

    friend bool operator==(const Observation&, const Observation&) = default;

private:
    std::vector<double> coords_;
};

enum class MetricKind { EuclideanL2 };

struct CostMetric {
    MetricKind kind = MetricKind::EuclideanL2;
    double order_s = 1.0;

    CostMetric() = default;
    explicit CostMetric(double s, MetricKind k = MetricKind::EuclideanL2);

    double distance(ObsView x, ObsView y) const;
};

// (||x - y||_2)^s
double cost_power(const CostMetric& metric, ObsView x, ObsView y);

// Atoms with probability weights; uniform weights unless constructed otherwise.
// Storage is row-major n x d.
class EmpiricalDistribution {
public:
    EmpiricalDistribution() = default;
    explicit EmpiricalDistribution(const std::vector<Observation>& samples);
    explicit EmpiricalDistribution(const std::vector<std::vector<double>>& rows);
    EmpiricalDistribution(std::size_t dim, std::vector<double> flat);
    EmpiricalDistribution(std::size_t dim, std::vector<double> flat, std::vector<double> weights);

    std::size_t size() const noexcept { return weights_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    ObsView atom(std::size_t i) const { return {flat_.data() + i * dim_, dim_}; }
    double weight(std::size_t i) const { return weights_[i]; }
    const std::vector<double>& weights() const noexcept { return weights_; }
    const std::vector<double>& flat() const noexcept { return flat_; }
    bool uniform() const noexcept { return uniform_; }

    std::vector<std::vector<double>> rows() const;

    // Identical atoms collapse into one with summed weight. `index_map[i]`
    // gives the merged index of original atom i. Merged atoms keep the order
    // of first appearance.
    struct Merged;
    Merged merge_duplicates() const;

private:
    std::size_t dim_ = 0;
    std::vector<double> flat_;
    std::vector<double> weights_;
    bool uniform_ = true;
};

struct EmpiricalDistribution::Merged {
    EmpiricalDistribution distribution;
    std::vector<std::size_t> index_map;
};

struct Gaussian1D {
    double mean = 0.0;
    double variance = 1.0;
};

struct GaussianDiag {
    std::vector<double> mean;
    std::vector<double> variance;
};

// A density known only through callbacks. `family` and `params` identify it
// for serialization; callers that build ad-hoc densities leave `family`
// empty and such models cannot be written to JSON.
struct GenericDensity {
    std::size_t dim = 1;
    std::function<double(ObsView)> log_density;
    std::function<void(Rng&, std::span<double>)> sampler;
    // Integration window for 1-d quadrature; infinite ends fall back to
    // location +- 10 scale.
    double support_lo = -std::numeric_limits<double>::infinity();
    double support_hi = std::numeric_limits<double>::infinity();
    double location = 0.0;
    double scale = 1.0;
    std::string family;
    std::vector<double> params;

    static GenericDensity beta(double a, double b);
};

struct EmpiricalPreChange {
    EmpiricalDistribution samples;
};

class PreChangeModel {
public:
    using Variant = std::variant<Gaussian1D, GaussianDiag, GenericDensity, EmpiricalPreChange>;

    explicit PreChangeModel(Gaussian1D g);
    explicit PreChangeModel(GaussianDiag g);
    explicit PreChangeModel(GenericDensity g);
    explicit PreChangeModel(EmpiricalPreChange e);

    static PreChangeModel gaussian(double mean, double variance) { return PreChangeModel(Gaussian1D{mean, variance}); }

    const Variant& variant() const noexcept { return *v_; }
    std::size_t dim() const noexcept { return dim_; }
    bool has_density() const noexcept { return !std::holds_alternative<EmpiricalPreChange>(*v_); }

    // Location and spread used to size integration windows.
    double location() const;
    double scale() const;
    std::pair<double, double> support() const;

    double log_density(ObsView x) const;
    void draw(Rng& rng, std::span<double> out) const;

    std::string describe() const;

private:
    std::shared_ptr<const Variant> v_;
    std::size_t dim_ = 1;
};

// Stateful draw helper for long streams; keeps the normal generator's cached
// second variate instead of discarding it on every call.
class ModelSampler {
public:
    explicit ModelSampler(PreChangeModel model) : model_(std::move(model)) {}
    void operator()(Rng& rng, std::span<double> out);
    const PreChangeModel& model() const noexcept { return model_; }

private:
    PreChangeModel model_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

double log_density(const PreChangeModel& model, ObsView x);

// Deterministic given seed; draws `count` observations from stream 0 of `rng_seed`.
std::vector<Observation> sample(const PreChangeModel& model, std::uint64_t rng_seed, std::size_t count);

EmpiricalDistribution sample_empirical(const PreChangeModel& model, Rng& rng, std::size_t count);

}  // namespace drcusum
