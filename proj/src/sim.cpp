#include "drcusum/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "drcusum/error.hpp"
#include "drcusum/io.hpp"
#include "drcusum/lfd.hpp"

namespace drcusum {

namespace {

constexpr std::uint64_t kTrainTag = 0x747261696eULL;
constexpr std::uint64_t kMtfaTag = 0x6d74666100000000ULL;
constexpr std::uint64_t kWaddTag = 0x7761646400000000ULL;
constexpr std::uint64_t kBandwidthTag = 0x6b6465ULL;

template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = count;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

std::string format_double(double v) {
    if (std::isnan(v)) return "";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

DetectorSpec cusum_detector(std::string name, std::vector<std::shared_ptr<const LlrScorer>> scorers) {
    require(!scorers.empty(), "cusum_detector: need at least one scorer");
    DetectorSpec spec;
    spec.name = std::move(name);
    spec.scenarios = scorers.size();
    spec.make = [scorers = std::move(scorers)] { return std::make_unique<CusumStatistic>(scorers); };
    return spec;
}

DetectorSpec nglr_detector(std::string name, PreChangeModel q, EmpiricalDistribution training, KdeConfig config) {
    NglrStatistic probe(q, training, config);  // validates inputs up front
    DetectorSpec spec;
    spec.name = std::move(name);
    spec.recursive = false;
    spec.make = [q = std::move(q), training = std::move(training), config = std::move(config)] {
        return std::make_unique<NglrStatistic>(q, training, config);
    };
    return spec;
}

std::optional<std::size_t> RunLengths::stopping_time(std::size_t trial, double b) const {
    require(b <= ceiling, "stopping_time: threshold above the simulated ceiling");
    const auto& rec = trials.at(trial).records;
    const auto it = std::lower_bound(rec.begin(), rec.end(), b,
                                     [](const std::pair<double, std::size_t>& r, double v) { return r.first < v; });
    if (it == rec.end()) return std::nullopt;
    return it->second;
}

RunLengths simulate(const TrialPlan& plan, double ceiling) {
    require(plan.trials >= 1, "simulate: need at least one trial");
    require(plan.cap >= 1, "simulate: cap must be >= 1");
    require(static_cast<bool>(plan.detector.make), "simulate: detector has no statistic factory");
    require(!std::isnan(ceiling), "simulate: ceiling is NaN");
    const PreChangeModel& law = plan.post ? *plan.post : plan.pre;
    RunLengths out;
    out.ceiling = ceiling;
    out.cap = plan.cap;
    out.trials.resize(plan.trials);
    parallel_for(plan.trials, plan.threads, [&](std::size_t i) {
        Rng rng = make_rng(plan.seed, i);
        ModelSampler sampler(law);
        auto stat = plan.detector.make();
        require_dim(stat->dim(), law.dim(), "simulate");
        std::vector<double> x(law.dim());
        TrialRecords& tr = out.trials[i];
        double best = -std::numeric_limits<double>::infinity();
        std::size_t k = 0;
        while (k < plan.cap) {
            sampler(rng, x);
            ++k;
            const double v = stat->update(x);
            if (v > best) {
                best = v;
                tr.records.emplace_back(v, k);
                if (v >= ceiling) break;
            }
        }
        tr.length = k;
    });
    return out;
}

Estimate estimate_at(const std::vector<const RunLengths*>& runs, double b) {
    Estimate e;
    double sum = 0.0, sum_sq = 0.0;
    for (const RunLengths* r : runs) {
        for (std::size_t i = 0; i < r->trials.size(); ++i) {
            const auto t = r->stopping_time(i, b);
            const double v = t ? static_cast<double>(*t) : static_cast<double>(r->cap);
            if (!t) ++e.censored;
            sum += v;
            sum_sq += v * v;
            ++e.trials;
        }
    }
    require(e.trials >= 1, "estimate_at: no trials");
    const double n = static_cast<double>(e.trials);
    e.mean = sum / n;
    if (e.trials > 1) {
        const double var = std::max(0.0, (sum_sq - n * e.mean * e.mean) / (n - 1.0));
        e.se = std::sqrt(var / n);
    }
    return e;
}

Estimate estimate_at(const RunLengths& runs, double b) { return estimate_at(std::vector<const RunLengths*>{&runs}, b); }

Estimate estimate_mtfa(const TrialPlan& plan, double b) {
    require(!plan.post, "estimate_mtfa: plan must have no change point");
    return estimate_at(simulate(plan, b), b);
}

Estimate estimate_wadd(const TrialPlan& plan, double b) {
    require(plan.post.has_value(), "estimate_wadd: plan needs a post-change law");
    return estimate_at(simulate(plan, b), b);
}

Calibration calibrate_threshold(const DetectorSpec& detector, const PreChangeModel& pre, double target_mtfa,
                                std::pair<double, double> bracket, std::size_t trials, std::uint64_t seed,
                                std::size_t cap, unsigned threads) {
    require(std::isfinite(target_mtfa) && target_mtfa > 1.0, "calibrate_threshold: target must exceed 1");
    auto [lo, hi] = bracket;
    require(std::isfinite(lo) && std::isfinite(hi) && lo < hi, "calibrate_threshold: invalid bracket");
    TrialPlan plan{detector, pre, std::nullopt, trials, cap ? cap : static_cast<std::size_t>(std::ceil(50.0 * target_mtfa)),
                   seed, threads};
    const RunLengths runs = simulate(plan, hi);
    auto mtfa = [&](double b) { return estimate_at(runs, b); };

    Calibration c;
    if (mtfa(lo).mean >= target_mtfa) {
        c.b = lo;
        c.at_bracket_end = true;
    } else if (mtfa(hi).mean < target_mtfa) {
        c.b = hi;
        c.at_bracket_end = true;
    } else {
        for (int it = 0; it < 200 && hi - lo > 1e-12 * (1.0 + std::abs(hi)); ++it) {
            const double mid = 0.5 * (lo + hi);
            if (mtfa(mid).mean >= target_mtfa) hi = mid; else lo = mid;
        }
        c.b = hi;
    }
    c.mtfa = mtfa(c.b);
    c.within_tolerance = std::abs(c.mtfa.mean - target_mtfa) <= 0.1 * target_mtfa;
    return c;
}

// ---------------------------------------------------------------------------

EmpiricalDistribution draw_training_set(const PreChangeModel& law, std::size_t n, std::uint64_t seed, std::size_t set,
                                        std::size_t scenario) {
    Rng rng = make_rng(derive_seed(seed, kTrainTag + scenario), set);
    return sample_empirical(law, rng, n);
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            static const char* known[] = {"recipe", "kind", "pre", "post", "scenarios", "training_sets", "n", "order_s",
                                          "radii", "thresholds", "trials_mtfa", "trials_wadd", "cap", "seed", "threads",
                                          "detectors"};
            if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
                std::end(known))
                fail(ErrorKind::InvalidArgument, "config: unknown key '" + it.key() + "'");
        }
        c.recipe = j.value("recipe", c.recipe);
        c.kind = j.value("kind", c.kind);
        c.pre = j.value("pre", c.pre);
        c.post = j.value("post", c.post);
        c.scenarios = j.value("scenarios", c.scenarios);
        c.training_sets = j.value("training_sets", c.training_sets);
        c.n = j.value("n", c.n);
        c.order_s = j.value("order_s", c.order_s);
        c.radii = j.value("radii", c.radii);
        c.thresholds = j.value("thresholds", c.thresholds);
        c.trials_mtfa = j.value("trials_mtfa", c.trials_mtfa);
        c.trials_wadd = j.value("trials_wadd", c.trials_wadd);
        c.cap = j.value("cap", c.cap);
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
        if (j.contains("detectors")) {
            for (const auto& d : j.at("detectors")) {
                DetectorEntry e;
                e.type = d.at("type").get<std::string>();
                e.scenarios = d.value("scenarios", e.scenarios);
                e.window = d.value("window", e.window);
                e.bandwidths = d.value("bandwidths", e.bandwidths);
                e.label = d.value("label", e.label);
                c.detectors.push_back(std::move(e));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("config: ") + e.what());
    }
    require(c.kind == "oc" || c.kind == "kl", "config: kind must be 'oc' or 'kl'");
    require(c.training_sets >= 1 && c.n >= 1, "config: training_sets and n must be >= 1");
    require(!c.radii.empty(), "config: radii must be non-empty");
    for (double r : c.radii) require(std::isfinite(r) && r > 0.0, "config: radii must be positive");
    require(c.order_s >= 1.0, "config: order_s must be >= 1");
    if (c.kind == "oc") {
        require(!c.thresholds.empty(), "config: thresholds must be non-empty");
        for (double b : c.thresholds) require(std::isfinite(b), "config: thresholds must be finite");
        require(c.trials_mtfa >= 1 && c.trials_wadd >= 1, "config: trial counts must be >= 1");
    }
    for (const auto& d : c.detectors) {
        require(d.type == "exact" || d.type == "mle" || d.type == "dr" || d.type == "nglr",
                "config: unknown detector type '" + d.type + "'");
        require(!d.scenarios.empty(), "config: detector scenarios must be non-empty");
        require(d.window >= 2, "config: nglr window must be >= 2");
    }
    return c;
}

nlohmann::json ExperimentConfig::to_json() const {
    nlohmann::json j;
    j["recipe"] = recipe;
    j["kind"] = kind;
    j["pre"] = pre;
    j["post"] = post;
    j["scenarios"] = scenarios;
    j["training_sets"] = training_sets;
    j["n"] = n;
    j["order_s"] = order_s;
    j["radii"] = radii;
    j["thresholds"] = thresholds;
    j["trials_mtfa"] = trials_mtfa;
    j["trials_wadd"] = trials_wadd;
    j["cap"] = cap;
    j["seed"] = seed;
    j["threads"] = threads;
    j["detectors"] = nlohmann::json::array();
    for (const auto& d : detectors) {
        j["detectors"].push_back({{"type", d.type},
                                  {"scenarios", d.scenarios},
                                  {"window", d.window},
                                  {"bandwidths", d.bandwidths},
                                  {"label", d.label}});
    }
    return j;
}

namespace {

std::vector<PreChangeModel> scenario_laws(const ExperimentConfig& c) {
    std::vector<PreChangeModel> laws;
    if (c.scenarios.empty()) {
        laws.push_back(parse_model_spec(c.post));
    } else {
        for (const auto& s : c.scenarios) laws.push_back(parse_model_spec(s));
    }
    return laws;
}

std::vector<DetectorEntry> default_detectors() {
    std::vector<DetectorEntry> out(3);
    out[0].type = "exact";
    out[1].type = "mle";
    out[2].type = "dr";
    return out;
}

std::string entry_label(const DetectorEntry& e) {
    if (!e.label.empty()) return e.label;
    if (e.scenarios.size() > 1) return e.type + "-m" + std::to_string(e.scenarios.size());
    return e.type;
}

}  // namespace

std::vector<OcPoint> run_oc_curve(const ExperimentConfig& config) {
    require(config.kind == "oc", "run_oc_curve: config kind must be 'oc'");
    const PreChangeModel pre = parse_model_spec(config.pre);
    const PreChangeModel post = parse_model_spec(config.post);
    const auto laws = scenario_laws(config);
    const auto detectors = config.detectors.empty() ? default_detectors() : config.detectors;
    const double b_max = *std::max_element(config.thresholds.begin(), config.thresholds.end());
    std::size_t max_m = 1;
    for (const auto& d : detectors) {
        max_m = std::max(max_m, d.scenarios.size());
        for (std::size_t m : d.scenarios) require(m < laws.size(), "config: detector scenario index out of range");
    }
    const std::size_t cap =
        config.cap ? config.cap
                   : static_cast<std::size_t>(std::ceil(50.0 * std::exp(b_max) * static_cast<double>(max_m)));

    // Training sets shared by all detectors.
    std::vector<std::vector<EmpiricalDistribution>> training(config.training_sets);
    for (std::size_t s = 0; s < config.training_sets; ++s)
        for (std::size_t m = 0; m < laws.size(); ++m)
            training[s].push_back(draw_training_set(laws[m], config.n, config.seed, s, m));

    std::vector<OcPoint> points;
    for (const auto& entry : detectors) {
        const std::vector<double> radii =
            entry.type == "dr" ? config.radii : std::vector<double>{std::numeric_limits<double>::quiet_NaN()};
        for (double radius : radii) {
            std::vector<RunLengths> mtfa_runs, wadd_runs;
            for (std::size_t s = 0; s < config.training_sets; ++s) {
                DetectorSpec spec;
                if (entry.type == "nglr") {
                    KdeConfig kc{entry.bandwidths, entry.window};
                    if (kc.bandwidths.empty()) {
                        Rng rng = make_rng(derive_seed(config.seed, kBandwidthTag));
                        kc.bandwidths = bandwidth_rule(entry.window, pre.dim(), sample_empirical(pre, rng, 10000));
                    }
                    spec = nglr_detector(entry_label(entry), pre, training[s][entry.scenarios.front()], kc);
                } else {
                    std::vector<std::shared_ptr<const LlrScorer>> scorers;
                    for (std::size_t m : entry.scenarios) {
                        if (entry.type == "exact") {
                            scorers.push_back(std::make_shared<ExactCusumScorer>(pre, laws[m]));
                        } else if (entry.type == "mle") {
                            scorers.push_back(std::make_shared<GaussianMleScorer>(pre, fit_gaussian_mle(training[s][m])));
                        } else {
                            scorers.push_back(std::make_shared<LfdScorer>(
                                LfdScorer::fit(pre, training[s][m], CostMetric(config.order_s), radius)));
                        }
                    }
                    spec = cusum_detector(entry_label(entry), std::move(scorers));
                }
                TrialPlan mtfa{spec, pre, std::nullopt, config.trials_mtfa, cap, derive_seed(config.seed, kMtfaTag + s),
                               config.threads};
                TrialPlan wadd{spec, pre, post, config.trials_wadd, cap, derive_seed(config.seed, kWaddTag + s),
                               config.threads};
                mtfa_runs.push_back(simulate(mtfa, b_max));
                wadd_runs.push_back(simulate(wadd, b_max));
            }
            std::vector<const RunLengths*> mp, wp;
            for (const auto& r : mtfa_runs) mp.push_back(&r);
            for (const auto& r : wadd_runs) wp.push_back(&r);
            for (double b : config.thresholds) {
                OcPoint p;
                p.detector = entry_label(entry);
                p.b = b;
                p.mtfa = estimate_at(mp, b);
                p.wadd = estimate_at(wp, b);
                p.radius = radius;
                p.n = entry.type == "exact" ? 0 : config.n;
                p.seed = config.seed;
                points.push_back(p);
            }
        }
    }
    return points;
}

void write_oc_csv(std::ostream& out, const std::vector<OcPoint>& points) {
    out << "detector,b,mtfa,mtfa_se,wadd,wadd_se,censored,radius,n,seed\n";
    for (const auto& p : points) {
        out << p.detector << ',' << format_double(p.b) << ',' << format_double(p.mtfa.mean) << ','
            << format_double(p.mtfa.se) << ',' << format_double(p.wadd.mean) << ',' << format_double(p.wadd.se) << ','
            << (p.mtfa.censored + p.wadd.censored) << ',' << format_double(p.radius) << ',' << p.n << ',' << p.seed
            << '\n';
    }
}

std::vector<KlRow> run_kl_curve(const ExperimentConfig& config) {
    require(config.kind == "kl", "run_kl_curve: config kind must be 'kl'");
    const PreChangeModel pre = parse_model_spec(config.pre);
    const auto laws = scenario_laws(config);
    std::vector<KlRow> rows;
    for (std::size_t s = 0; s < config.training_sets; ++s) {
        const auto training = draw_training_set(laws.front(), config.n, config.seed, s, 0);
        for (double r : config.radii) {
            const auto sol = solve_dual(pre, CostMetric(config.order_s), training, r);
            rows.push_back({s, r, sol.dual_value, sol.point.lambda, sol.iterations, sol.converged});
        }
    }
    return rows;
}

void write_kl_csv(std::ostream& out, const std::vector<KlRow>& rows) {
    out << "set,radius,dual_value,lambda,iterations,converged\n";
    for (const auto& r : rows) {
        out << r.set << ',' << format_double(r.radius) << ',' << format_double(r.dual_value) << ','
            << format_double(r.lambda) << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << '\n';
    }
}

std::optional<MatchedWadd> wadd_at_mtfa(const std::vector<OcPoint>& curve, double mtfa) {
    require(mtfa > 0.0, "wadd_at_mtfa: MTFA must be positive");
    std::vector<const OcPoint*> pts;
    for (const auto& p : curve) pts.push_back(&p);
    std::sort(pts.begin(), pts.end(), [](const OcPoint* a, const OcPoint* b) { return a->b < b->b; });
    const double target = std::log(mtfa);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const double l0 = std::log(pts[i]->mtfa.mean);
        const double l1 = std::log(pts[i + 1]->mtfa.mean);
        if (target < std::min(l0, l1) || target > std::max(l0, l1)) continue;
        const double t = l1 == l0 ? 0.0 : (target - l0) / (l1 - l0);
        return MatchedWadd{pts[i]->wadd.mean + t * (pts[i + 1]->wadd.mean - pts[i]->wadd.mean),
                           (1.0 - t) * pts[i]->wadd.se + t * pts[i + 1]->wadd.se};
    }
    return std::nullopt;
}

}  // namespace drcusum
