#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "drcusum/distributions.hpp"
#include "drcusum/scorer.hpp"

namespace drcusum {

// max(S_prev, 0) + llr; a non-finite llr is an error.
double cusum_step(double s_prev, double llr_value);

// b = log(M * gamma), which keeps the mean time to false alarm of the
// M-scenario max statistic above gamma.
double threshold_for_mtfa(double gamma, std::size_t scenarios);

struct ScenarioScorer {
    std::size_t id = 0;  // 1-based scenario label
    std::shared_ptr<const LlrScorer> scorer;
};

// Scenarios are numbered 1..M in order.
std::vector<ScenarioScorer> make_scenarios(std::vector<std::shared_ptr<const LlrScorer>> scorers);

class DetectorState {
public:
    DetectorState(std::size_t scenarios, double threshold);

    // Feeds one observation to every scenario; stops at the first step whose
    // maximum statistic reaches the threshold.
    void advance(ObsView x, std::span<const ScenarioScorer> scorers);

    std::size_t scenarios() const noexcept { return stats_.size(); }
    std::size_t step() const noexcept { return step_; }
    double threshold() const noexcept { return threshold_; }
    double stat(std::size_t m) const { return static_cast<double>(stats_.at(m)); }
    std::vector<double> stats() const;
    double max_stat() const;
    bool stopped() const noexcept { return stopped_at_.has_value(); }
    std::optional<std::size_t> stopped_at() const noexcept { return stopped_at_; }
    // 1-based, lowest id on ties.
    std::optional<std::size_t> argmax_scenario() const noexcept { return argmax_; }

private:
    std::vector<long double> stats_;
    std::size_t step_ = 0;
    double threshold_;
    std::optional<std::size_t> stopped_at_;
    std::optional<std::size_t> argmax_;
};

DetectorState advance(DetectorState state, ObsView x, std::span<const ScenarioScorer> scorers);

// Pull-based observation stream.
class ObservationSource {
public:
    virtual ~ObservationSource() = default;
    virtual std::size_t dim() const = 0;
    // Writes the next observation into `out`; false at end of stream.
    virtual bool next(std::span<double> out) = 0;
};

class VectorSource final : public ObservationSource {
public:
    explicit VectorSource(std::vector<Observation> data);
    std::size_t dim() const override { return dim_; }
    bool next(std::span<double> out) override;

private:
    std::vector<Observation> data_;
    std::size_t pos_ = 0;
    std::size_t dim_ = 0;
};

enum class StreamOutcome { Stopped, Censored, Exhausted };

struct StreamResult {
    StreamOutcome outcome = StreamOutcome::Exhausted;
    std::size_t steps = 0;  // stopping time when Stopped, else observations consumed
    std::optional<std::size_t> argmax_scenario;
    std::vector<double> final_stats;
};

StreamResult run_stream(std::span<const ScenarioScorer> scorers, double threshold, ObservationSource& stream,
                        std::size_t cap);

// Streaming detection statistic: the detector alarms at the first step whose
// returned value reaches the threshold. Instances hold per-stream state.
class Statistic {
public:
    virtual ~Statistic() = default;
    virtual double update(ObsView x) = 0;
    virtual void reset() = 0;
    virtual std::size_t dim() const = 0;
};

// max_m S^(m) over the scenario CuSum recursions.
class CusumStatistic final : public Statistic {
public:
    explicit CusumStatistic(std::vector<std::shared_ptr<const LlrScorer>> scorers);
    double update(ObsView x) override;
    void reset() override;
    std::size_t dim() const override { return scorers_.front()->dim(); }

private:
    std::vector<std::shared_ptr<const LlrScorer>> scorers_;
    std::vector<long double> stats_;
};

}  // namespace drcusum
