#include "drcusum/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "drcusum/error.hpp"

namespace drcusum {

namespace {

long double step_ld(long double s_prev, double llr_value) {
    if (!std::isfinite(llr_value)) fail(ErrorKind::Data, "cusum: non-finite log-likelihood ratio");
    return std::max(s_prev, 0.0L) + llr_value;
}

}  // namespace

double cusum_step(double s_prev, double llr_value) { return static_cast<double>(step_ld(s_prev, llr_value)); }

double threshold_for_mtfa(double gamma, std::size_t scenarios) {
    require(std::isfinite(gamma) && gamma > 1.0, "threshold_for_mtfa: gamma must exceed 1");
    require(scenarios >= 1, "threshold_for_mtfa: need at least one scenario");
    return std::log(static_cast<double>(scenarios) * gamma);
}

std::vector<ScenarioScorer> make_scenarios(std::vector<std::shared_ptr<const LlrScorer>> scorers) {
    std::vector<ScenarioScorer> out;
    out.reserve(scorers.size());
    for (std::size_t m = 0; m < scorers.size(); ++m) {
        require(scorers[m] != nullptr, "make_scenarios: null scorer");
        out.push_back({m + 1, std::move(scorers[m])});
    }
    return out;
}

DetectorState::DetectorState(std::size_t scenarios, double threshold) : stats_(scenarios, 0.0L), threshold_(threshold) {
    require(scenarios >= 1, "detector: need at least one scenario");
    require(!std::isnan(threshold), "detector: threshold is NaN");
}

void DetectorState::advance(ObsView x, std::span<const ScenarioScorer> scorers) {
    require(!stopped(), "detector: advance after stop");
    if (scorers.size() != stats_.size())
        fail(ErrorKind::DimensionMismatch, "detector: expected " + std::to_string(stats_.size()) + " scorers, got " +
                                               std::to_string(scorers.size()));
    for (std::size_t m = 0; m < scorers.size(); ++m) {
        require_dim(x.size(), scorers[m].scorer->dim(), "detector");
        stats_[m] = step_ld(stats_[m], scorers[m].scorer->llr(x));
    }
    ++step_;
    const auto best = std::max_element(stats_.begin(), stats_.end());
    if (*best >= threshold_) {
        stopped_at_ = step_;
        argmax_ = static_cast<std::size_t>(best - stats_.begin()) + 1;
    }
}

std::vector<double> DetectorState::stats() const {
    std::vector<double> out(stats_.size());
    std::transform(stats_.begin(), stats_.end(), out.begin(), [](long double v) { return static_cast<double>(v); });
    return out;
}

double DetectorState::max_stat() const { return static_cast<double>(*std::max_element(stats_.begin(), stats_.end())); }

DetectorState advance(DetectorState state, ObsView x, std::span<const ScenarioScorer> scorers) {
    state.advance(x, scorers);
    return state;
}

VectorSource::VectorSource(std::vector<Observation> data) : data_(std::move(data)) {
    if (!data_.empty()) dim_ = data_.front().dim();
    for (const auto& o : data_) require_dim(o.dim(), dim_, "VectorSource");
}

bool VectorSource::next(std::span<double> out) {
    if (pos_ >= data_.size()) return false;
    require_dim(out.size(), dim_, "VectorSource");
    std::copy(data_[pos_].coords().begin(), data_[pos_].coords().end(), out.begin());
    ++pos_;
    return true;
}

StreamResult run_stream(std::span<const ScenarioScorer> scorers, double threshold, ObservationSource& stream,
                        std::size_t cap) {
    require(cap >= 1, "run_stream: cap must be >= 1");
    require(!scorers.empty(), "run_stream: need at least one scorer");
    DetectorState state(scorers.size(), threshold);
    std::vector<double> x(scorers.front().scorer->dim());
    StreamResult res;
    while (state.step() < cap) {
        if (!stream.next(x)) {
            res.outcome = StreamOutcome::Exhausted;
            break;
        }
        state.advance(x, scorers);
        if (state.stopped()) break;
    }
    if (state.stopped()) {
        res.outcome = StreamOutcome::Stopped;
        res.argmax_scenario = state.argmax_scenario();
    } else if (state.step() >= cap) {
        res.outcome = StreamOutcome::Censored;
    }
    res.steps = state.step();
    res.final_stats = state.stats();
    return res;
}

CusumStatistic::CusumStatistic(std::vector<std::shared_ptr<const LlrScorer>> scorers)
    : scorers_(std::move(scorers)), stats_(scorers_.size(), 0.0L) {
    require(!scorers_.empty(), "CusumStatistic: need at least one scorer");
    for (const auto& s : scorers_) {
        require(s != nullptr, "CusumStatistic: null scorer");
        require_dim(s->dim(), scorers_.front()->dim(), "CusumStatistic");
    }
}

double CusumStatistic::update(ObsView x) {
    long double best = -std::numeric_limits<long double>::infinity();
    for (std::size_t m = 0; m < scorers_.size(); ++m) {
        stats_[m] = step_ld(stats_[m], scorers_[m]->llr(x));
        best = std::max(best, stats_[m]);
    }
    return static_cast<double>(best);
}

void CusumStatistic::reset() { std::fill(stats_.begin(), stats_.end(), 0.0L); }

}  // namespace drcusum
