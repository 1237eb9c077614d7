#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "drcusum/baselines.hpp"
#include "drcusum/detector.hpp"
#include "drcusum/distributions.hpp"

namespace drcusum {

using StatisticFactory = std::function<std::unique_ptr<Statistic>()>;

struct DetectorSpec {
    std::string name;
    StatisticFactory make;
    std::size_t scenarios = 1;
    // CuSum-structured; delays measured from a change at time 1 are then
    // worst-case. False for NGLR.
    bool recursive = true;
};

DetectorSpec cusum_detector(std::string name, std::vector<std::shared_ptr<const LlrScorer>> scorers);
DetectorSpec nglr_detector(std::string name, PreChangeModel q, EmpiricalDistribution training, KdeConfig config);

// Streams are drawn from `pre` throughout when `post` is empty (no change),
// otherwise from `post` starting at time 1. Trial i draws from
// make_rng(seed, i), so results do not depend on `threads`.
struct TrialPlan {
    DetectorSpec detector;
    PreChangeModel pre;
    std::optional<PreChangeModel> post;
    std::size_t trials = 1000;
    std::size_t cap = 100000;
    std::uint64_t seed = 0;
    unsigned threads = 0;  // 0: hardware concurrency
};

// Per-trial record of every new running maximum of the statistic, kept
// until it reaches `ceiling` or the cap. The stopping time for any
// threshold b <= ceiling is the time of the first record >= b.
struct TrialRecords {
    std::vector<std::pair<double, std::size_t>> records;
    std::size_t length = 0;
};

struct RunLengths {
    std::vector<TrialRecords> trials;
    double ceiling = 0.0;
    std::size_t cap = 0;

    std::optional<std::size_t> stopping_time(std::size_t trial, double b) const;
};

RunLengths simulate(const TrialPlan& plan, double ceiling);

struct Estimate {
    double mean = 0.0;
    double se = 0.0;
    std::size_t trials = 0;
    std::size_t censored = 0;  // counted at the cap; mean is then a lower bound
    bool lower_bound() const noexcept { return censored > 0; }
    bool all_censored() const noexcept { return trials > 0 && censored == trials; }
};

// Sample mean and standard error of stopping times, censored trials at cap.
Estimate estimate_at(const RunLengths& runs, double b);
Estimate estimate_at(const std::vector<const RunLengths*>& runs, double b);

Estimate estimate_mtfa(const TrialPlan& plan, double b);
Estimate estimate_wadd(const TrialPlan& plan, double b);

struct Calibration {
    double b = 0.0;
    Estimate mtfa;
    bool within_tolerance = false;  // |mtfa - target| <= 10% of target
    bool at_bracket_end = false;
};

// Bisection on b with common random numbers, so the estimated MTFA is a
// monotone step function of b. Returns the smallest b whose MTFA reaches
// the target. The cap defaults to 50x the target.
Calibration calibrate_threshold(const DetectorSpec& detector, const PreChangeModel& pre, double target_mtfa,
                                std::pair<double, double> bracket, std::size_t trials, std::uint64_t seed,
                                std::size_t cap = 0, unsigned threads = 0);

// ---------------------------------------------------------------------------
// Experiment recipes

struct DetectorEntry {
    std::string type;                 // exact | mle | dr | nglr
    std::vector<std::size_t> scenarios{0};  // training laws used (dr)
    std::size_t window = 50;          // nglr
    std::vector<double> bandwidths;   // nglr; empty: rule of thumb from pre samples
    std::string label;                // defaults to a name derived from type
};

struct ExperimentConfig {
    std::string recipe = "custom";
    std::string kind = "oc";  // oc | kl
    std::string pre = "gaussian:mu=0,sigma=1";
    std::string post = "gaussian:mu=0.5,sigma=1";  // true post-change law for delay streams
    std::vector<std::string> scenarios;            // training laws; empty means {post}
    std::size_t training_sets = 10;
    std::size_t n = 25;
    double order_s = 2.0;
    std::vector<double> radii{0.1};
    std::vector<double> thresholds{3.0, 4.0, 5.0};
    std::size_t trials_mtfa = 500;
    std::size_t trials_wadd = 500;
    std::size_t cap = 0;  // 0: 50x exp(max threshold) times the scenario count
    std::uint64_t seed = 1;
    unsigned threads = 0;
    std::vector<DetectorEntry> detectors;

    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct OcPoint {
    std::string detector;
    double b = 0.0;
    Estimate mtfa;
    Estimate wadd;
    double radius = 0.0;  // NaN when not applicable
    std::size_t n = 0;
    std::uint64_t seed = 0;
};

std::vector<OcPoint> run_oc_curve(const ExperimentConfig& config);
void write_oc_csv(std::ostream& out, const std::vector<OcPoint>& points);

struct KlRow {
    std::size_t set = 0;
    double radius = 0.0;
    double dual_value = 0.0;
    double lambda = 0.0;
    int iterations = 0;
    bool converged = false;
};

std::vector<KlRow> run_kl_curve(const ExperimentConfig& config);
void write_kl_csv(std::ostream& out, const std::vector<KlRow>& rows);

// WADD at a given MTFA, interpolated linearly in log MTFA between the two
// bracketing thresholds of one detector's curve. Empty when out of range.
struct MatchedWadd {
    double wadd = 0.0;
    double se = 0.0;
};
std::optional<MatchedWadd> wadd_at_mtfa(const std::vector<OcPoint>& curve, double mtfa);

// Training set `set` of scenario `scenario` for a config seed.
EmpiricalDistribution draw_training_set(const PreChangeModel& law, std::size_t n, std::uint64_t seed, std::size_t set,
                                        std::size_t scenario);

}  // namespace drcusum
