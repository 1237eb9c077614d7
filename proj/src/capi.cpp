#include "drcusum/drcusum.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "drcusum/detector.hpp"
#include "drcusum/error.hpp"
#include "drcusum/io.hpp"
#include "drcusum/lfd.hpp"
#include "drcusum/radius.hpp"
#include "drcusum/sim.hpp"
#include "drcusum/transport.hpp"

using nlohmann::json;
using namespace drcusum;

struct drc_model {
    PreChangeModel model;
};

struct drc_scorer {
    std::shared_ptr<const LfdScorer> scorer;
};

struct drc_detector {
    std::vector<ScenarioScorer> scenarios;
    DetectorState state;
};

struct drc_csv {
    std::unique_ptr<std::ifstream> file;
    std::unique_ptr<CsvReader> reader;
};

namespace {

thread_local std::string g_last_error;

drc_status status_of(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return DRC_INVALID_ARGUMENT;
        case ErrorKind::DimensionMismatch: return DRC_DIMENSION_MISMATCH;
        case ErrorKind::Data: return DRC_DATA;
        case ErrorKind::Solver: return DRC_SOLVER;
        case ErrorKind::NotConverged: return DRC_NOT_CONVERGED;
        case ErrorKind::Io: return DRC_IO;
    }
    return DRC_INTERNAL;
}

template <class F>
drc_status guarded(F&& f) {
    g_last_error.clear();
    try {
        return f();
    } catch (const Error& e) {
        g_last_error = e.what();
        return status_of(e.kind());
    } catch (const json::exception& e) {
        g_last_error = std::string("invalid JSON request: ") + e.what();
        return DRC_INVALID_ARGUMENT;
    } catch (const std::bad_alloc&) {
        g_last_error = "out of memory";
        return DRC_INTERNAL;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return DRC_INTERNAL;
    }
}

char* dup_string(const std::string& s) {
    char* p = static_cast<char*>(std::malloc(s.size() + 1));
    if (!p) throw std::bad_alloc();
    std::memcpy(p, s.c_str(), s.size() + 1);
    return p;
}

void require_out(const void* p, const char* name) {
    if (!p) fail(ErrorKind::InvalidArgument, std::string(name) + " must not be null");
}

json parse_request(const char* text) {
    require_out(text, "request");
    json j = json::parse(text);
    if (!j.is_object()) fail(ErrorKind::InvalidArgument, "request must be a JSON object");
    return j;
}

const char* stop_name(StopReason stop) {
    switch (stop) {
        case StopReason::GradientTolerance: return "gradient_tolerance";
        case StopReason::Stagnation: return "stagnation";
        case StopReason::IterationCap: return "iteration_cap";
    }
    return "unknown";
}

EtaMethod parse_method(const std::string& name) {
    if (name == "auto") return EtaMethod::Auto;
    if (name == "analytic") return EtaMethod::GaussianAnalytic;
    if (name == "quadrature") return EtaMethod::Quadrature;
    if (name == "samples") return EtaMethod::SampleAverage;
    fail(ErrorKind::InvalidArgument, "unknown eta method '" + name + "'");
}

json estimate_json(const Estimate& e) {
    return json{{"mean", e.mean}, {"se", e.se}, {"trials", e.trials}, {"censored", e.censored}};
}

struct SimRequest {
    DetectorSpec detector;
    PreChangeModel pre;
    std::optional<PreChangeModel> post;
    std::vector<double> thresholds;
    std::size_t trials;
    std::size_t cap;
    std::uint64_t seed;
    unsigned threads;
};

SimRequest parse_sim(const json& j, bool need_post, bool need_thresholds) {
    static const std::vector<std::string> known{"scorers", "pre",  "post", "thresholds", "trials", "cap",
                                                "seed",    "threads", "target", "bracket"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end())
            fail(ErrorKind::InvalidArgument, "unknown request field '" + key + "'");
    }
    std::vector<std::shared_ptr<const LlrScorer>> scorers;
    for (const auto& doc : j.at("scorers")) {
        scorers.push_back(std::make_shared<LfdScorer>(LfdScorer::from_json(doc.is_string() ? json::parse(doc.get<std::string>()) : doc)));
    }
    require(!scorers.empty(), "at least one scorer is required");
    PreChangeModel pre = j.contains("pre") ? parse_model_spec(j.at("pre").get<std::string>())
                                           : static_cast<const LfdScorer&>(*scorers.front()).prechange();
    std::optional<PreChangeModel> post;
    if (j.contains("post")) post = parse_model_spec(j.at("post").get<std::string>());
    require(!need_post || post.has_value(), "post-change model 'post' is required");
    std::vector<double> thresholds = j.value("thresholds", std::vector<double>{});
    require(!need_thresholds || !thresholds.empty(), "'thresholds' must list at least one value");
    for (double b : thresholds) require(std::isfinite(b), "thresholds must be finite");
    SimRequest r{cusum_detector(scorers.size() == 1 ? "dr" : "dr-m" + std::to_string(scorers.size()), scorers),
                 std::move(pre),
                 std::move(post),
                 std::move(thresholds),
                 j.value("trials", std::size_t{500}),
                 j.value("cap", std::size_t{0}),
                 j.value("seed", std::uint64_t{1}),
                 j.value("threads", 0u)};
    require(r.trials > 0, "trials must be positive");
    return r;
}

std::string run_sim(const char* request_json, bool wadd) {
    const json j = parse_request(request_json);
    SimRequest r = parse_sim(j, wadd, true);
    const double bmax = *std::max_element(r.thresholds.begin(), r.thresholds.end());
    if (r.cap == 0) {
        const double cap = 50.0 * std::exp(std::max(bmax, 0.0)) * static_cast<double>(r.detector.scenarios);
        r.cap = static_cast<std::size_t>(std::min(cap, 1e9));
    }
    TrialPlan plan{r.detector, r.pre, wadd ? r.post : std::nullopt, r.trials, r.cap, r.seed, r.threads};
    const RunLengths runs = simulate(plan, bmax);
    json points = json::array();
    for (double b : r.thresholds) {
        json p = estimate_json(estimate_at(runs, b));
        p["b"] = b;
        points.push_back(std::move(p));
    }
    return json{{"measure", wadd ? "wadd" : "mtfa"}, {"trials", r.trials}, {"cap", r.cap}, {"seed", r.seed},
                {"points", std::move(points)}}
        .dump();
}

const LfdScorer& scorer_of(const drc_scorer* s) {
    require_out(s, "scorer");
    return *s->scorer;
}

}  // namespace

extern "C" {

const char* drc_version(void) { return DRCUSUM_VERSION; }

const char* drc_last_error(void) { return g_last_error.c_str(); }

const char* drc_status_name(drc_status status) {
    switch (status) {
        case DRC_OK: return "ok";
        case DRC_INVALID_ARGUMENT: return "invalid_argument";
        case DRC_DIMENSION_MISMATCH: return "dimension_mismatch";
        case DRC_DATA: return "data";
        case DRC_SOLVER: return "solver";
        case DRC_NOT_CONVERGED: return "not_converged";
        case DRC_IO: return "io";
        case DRC_INTERNAL: return "internal";
    }
    return "unknown";
}

void drc_string_free(char* s) { std::free(s); }

void drc_doubles_free(double* p) { std::free(p); }

drc_status drc_model_parse(const char* spec, drc_model** out) {
    return guarded([&] {
        require_out(spec, "spec");
        require_out(out, "out");
        *out = new drc_model{parse_model_spec(spec)};
        return DRC_OK;
    });
}

size_t drc_model_dim(const drc_model* model) { return model ? model->model.dim() : 0; }

drc_status drc_model_to_json(const drc_model* model, char** out_json) {
    return guarded([&] {
        require_out(model, "model");
        require_out(out_json, "out_json");
        *out_json = dup_string(model_to_json(model->model).dump());
        return DRC_OK;
    });
}

void drc_model_free(drc_model* model) { delete model; }

drc_status drc_csv_read_file(const char* path, double** out_data, size_t* out_rows, size_t* out_dim) {
    return guarded([&] {
        require_out(path, "path");
        require_out(out_data, "out_data");
        require_out(out_rows, "out_rows");
        require_out(out_dim, "out_dim");
        const auto rows = read_csv_file(path);
        const std::size_t dim = rows.empty() ? 0 : rows.front().size();
        auto* data = static_cast<double*>(std::malloc(std::max<std::size_t>(rows.size() * dim, 1) * sizeof(double)));
        if (!data) throw std::bad_alloc();
        for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), data + i * dim);
        *out_data = data;
        *out_rows = rows.size();
        *out_dim = dim;
        return DRC_OK;
    });
}

drc_status drc_csv_open(const char* path, drc_csv** out) {
    return guarded([&] {
        require_out(out, "out");
        auto csv = std::make_unique<drc_csv>();
        if (path && std::strcmp(path, "-") != 0) {
            csv->file = std::make_unique<std::ifstream>(path);
            if (!*csv->file) fail(ErrorKind::Io, std::string("cannot open '") + path + "'");
            csv->reader = std::make_unique<CsvReader>(*csv->file, path);
        } else {
            csv->reader = std::make_unique<CsvReader>(std::cin, "<stdin>");
        }
        *out = csv.release();
        return DRC_OK;
    });
}

drc_status drc_csv_next(drc_csv* csv, double* row, size_t capacity, size_t* out_dim, int* has_row) {
    return guarded([&] {
        require_out(csv, "csv");
        require_out(has_row, "has_row");
        auto next = csv->reader->next();
        *has_row = next.has_value() ? 1 : 0;
        if (!next) return DRC_OK;
        if (out_dim) *out_dim = next->size();
        if (next->size() > capacity)
            fail(ErrorKind::DimensionMismatch, "row width " + std::to_string(next->size()) + " exceeds buffer capacity " +
                                                   std::to_string(capacity));
        require_out(row, "row");
        std::copy(next->begin(), next->end(), row);
        return DRC_OK;
    });
}

size_t drc_csv_line(const drc_csv* csv) { return csv ? csv->reader->line() : 0; }

void drc_csv_close(drc_csv* csv) { delete csv; }

drc_status drc_lfd_fit(const drc_model* pre, const double* samples, size_t rows, size_t dim, double radius,
                       double order_s, const char* options_json, drc_scorer** out) {
    return guarded([&] {
        require_out(pre, "pre");
        require_out(samples, "samples");
        require_out(out, "out");
        require(rows > 0 && dim > 0, "training set must be non-empty");
        SolveOptions opts;
        if (options_json && *options_json) {
            const json j = parse_request(options_json);
            for (const auto& [key, value] : j.items()) {
                if (key == "tol") opts.tol = value.get<double>();
                else if (key == "max_iterations") opts.max_iterations = value.get<int>();
                else if (key == "lambda0") opts.lambda0 = value.get<double>();
                else if (key == "method") opts.method = parse_method(value.get<std::string>());
                else if (key == "mc_size") opts.mc_size = value.get<std::size_t>();
                else if (key == "mc_seed") opts.mc_seed = value.get<std::uint64_t>();
                else if (key == "quad_tol") opts.quad_tol = value.get<double>();
                else fail(ErrorKind::InvalidArgument, "unknown solver option '" + key + "'");
            }
        }
        EmpiricalDistribution training(dim, std::vector<double>(samples, samples + rows * dim));
        auto scorer = std::make_shared<const LfdScorer>(
            LfdScorer::fit(pre->model, std::move(training), CostMetric(order_s), radius, opts));
        const bool converged = scorer->solution().converged;
        *out = new drc_scorer{std::move(scorer)};
        if (!converged) {
            g_last_error = "dual solver reached the iteration cap";
            return DRC_NOT_CONVERGED;
        }
        return DRC_OK;
    });
}

drc_status drc_scorer_from_json(const char* text, drc_scorer** out) {
    return guarded([&] {
        require_out(text, "json");
        require_out(out, "out");
        json j;
        try {
            j = json::parse(text);
        } catch (const json::exception& e) {
            fail(ErrorKind::Data, std::string("scorer JSON: ") + e.what());
        }
        *out = new drc_scorer{std::make_shared<const LfdScorer>(LfdScorer::from_json(j))};
        return DRC_OK;
    });
}

drc_status drc_scorer_to_json(const drc_scorer* scorer, char** out_json) {
    return guarded([&] {
        require_out(out_json, "out_json");
        *out_json = dup_string(scorer_of(scorer).to_json().dump(2) + "\n");
        return DRC_OK;
    });
}

drc_status drc_scorer_summary(const drc_scorer* scorer, char** out_json) {
    return guarded([&] {
        require_out(out_json, "out_json");
        const LfdScorer& s = scorer_of(scorer);
        const DualSolution& sol = s.solution();
        const json j{{"dual_value", sol.dual_value},     {"lambda", sol.point.lambda},
                     {"iterations", sol.iterations},     {"converged", sol.converged},
                     {"stop", stop_name(sol.stop)},      {"radius", s.radius()},
                     {"order_s", s.metric().order_s},    {"n", s.training().size()}};
        *out_json = dup_string(j.dump());
        return DRC_OK;
    });
}

size_t drc_scorer_dim(const drc_scorer* scorer) { return scorer ? scorer->scorer->dim() : 0; }

drc_status drc_scorer_llr(const drc_scorer* scorer, const double* x, size_t dim, double* out) {
    return guarded([&] {
        const LfdScorer& s = scorer_of(scorer);
        require_out(x, "x");
        require_out(out, "out");
        require_dim(dim, s.dim(), "drc_scorer_llr");
        *out = s.llr(ObsView(x, dim));
        return DRC_OK;
    });
}

void drc_scorer_free(drc_scorer* scorer) { delete scorer; }

double drc_threshold_for_gamma(double gamma, size_t scenarios) {
    try {
        return threshold_for_mtfa(gamma, scenarios);
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return std::nan("");
    }
}

drc_status drc_detector_new(const drc_scorer* const* scorers, size_t m, double threshold, drc_detector** out) {
    return guarded([&] {
        require_out(scorers, "scorers");
        require_out(out, "out");
        require(m > 0, "at least one scorer is required");
        std::vector<std::shared_ptr<const LlrScorer>> list;
        for (size_t i = 0; i < m; ++i) {
            require_out(scorers[i], "scorer");
            if (i > 0) require_dim(scorers[i]->scorer->dim(), scorers[0]->scorer->dim(), "drc_detector_new");
            list.push_back(scorers[i]->scorer);
        }
        *out = new drc_detector{make_scenarios(std::move(list)), DetectorState(m, threshold)};
        return DRC_OK;
    });
}

drc_status drc_detector_step(drc_detector* detector, const double* x, size_t dim, int* out_stopped) {
    return guarded([&] {
        require_out(detector, "detector");
        require_out(x, "x");
        require_dim(dim, detector->scenarios.front().scorer->dim(), "drc_detector_step");
        if (!detector->state.stopped()) detector->state.advance(ObsView(x, dim), detector->scenarios);
        if (out_stopped) *out_stopped = detector->state.stopped() ? 1 : 0;
        return DRC_OK;
    });
}

drc_status drc_detector_report(const drc_detector* detector, char** out_json) {
    return guarded([&] {
        require_out(detector, "detector");
        require_out(out_json, "out_json");
        const DetectorState& st = detector->state;
        json j{{"stopped", st.stopped()},
               {"steps", st.step()},
               {"threshold", st.threshold()},
               {"stopping_time", nullptr},
               {"argmax_scenario", nullptr},
               {"final_stats", st.stats()}};
        if (st.stopped()) {
            j["stopping_time"] = *st.stopped_at();
            j["argmax_scenario"] = *st.argmax_scenario();
        }
        *out_json = dup_string(j.dump());
        return DRC_OK;
    });
}

void drc_detector_free(drc_detector* detector) { delete detector; }

drc_status drc_experiment_run(const char* config_json, char** out_csv) {
    return guarded([&] {
        require_out(out_csv, "out_csv");
        const ExperimentConfig config = ExperimentConfig::from_json(parse_request(config_json));
        std::ostringstream csv;
        if (config.kind == "kl") {
            write_kl_csv(csv, run_kl_curve(config));
        } else {
            write_oc_csv(csv, run_oc_curve(config));
        }
        *out_csv = dup_string(csv.str());
        return DRC_OK;
    });
}

drc_status drc_experiment_normalize(const char* config_json, char** out_json) {
    return guarded([&] {
        require_out(out_json, "out_json");
        *out_json = dup_string(ExperimentConfig::from_json(parse_request(config_json)).to_json().dump(2) + "\n");
        return DRC_OK;
    });
}

drc_status drc_sim_mtfa(const char* request_json, char** out_json) {
    return guarded([&] {
        require_out(out_json, "out_json");
        *out_json = dup_string(run_sim(request_json, false));
        return DRC_OK;
    });
}

drc_status drc_sim_wadd(const char* request_json, char** out_json) {
    return guarded([&] {
        require_out(out_json, "out_json");
        *out_json = dup_string(run_sim(request_json, true));
        return DRC_OK;
    });
}

drc_status drc_calibrate(const char* request_json, char** out_json) {
    return guarded([&] {
        require_out(out_json, "out_json");
        const json j = parse_request(request_json);
        const SimRequest r = parse_sim(j, false, false);
        const double target = j.at("target").get<double>();
        const auto bracket = j.value("bracket", std::vector<double>{0.0, std::log(target) + 3.0});
        require(bracket.size() == 2, "bracket must have two entries");
        const Calibration c = calibrate_threshold(r.detector, r.pre, target, {bracket[0], bracket[1]}, r.trials,
                                                  r.seed, r.cap, r.threads);
        const json res{{"b", c.b},
                       {"target", target},
                       {"mtfa", estimate_json(c.mtfa)},
                       {"within_tolerance", c.within_tolerance},
                       {"at_bracket_end", c.at_bracket_end},
                       {"trials", r.trials},
                       {"seed", r.seed}};
        *out_json = dup_string(res.dump());
        return DRC_OK;
    });
}

drc_status drc_radius_report(const char* request_json, char** out_json) {
    return guarded([&] {
        require_out(out_json, "out_json");
        const json j = parse_request(request_json);
        static const std::vector<std::string> known{"delta", "order_s", "tc",   "n",       "wpq",
                                                    "pre",   "train",   "post", "mc_size", "seed"};
        for (const auto& [key, value] : j.items()) {
            if (std::find(known.begin(), known.end(), key) == known.end())
                fail(ErrorKind::InvalidArgument, "unknown request field '" + key + "'");
        }
        const double delta = j.at("delta").get<double>();
        const double s = j.value("order_s", 2.0);
        std::optional<PreChangeModel> pre;
        if (j.contains("pre")) pre = parse_model_spec(j.at("pre").get<std::string>());
        TransportConstant tc;
        const json& tcj = j.at("tc");
        if (tcj.is_string()) {
            require(tcj.get<std::string>() == "auto", "tc must be a number or \"auto\"");
            require(pre.has_value(), "tc \"auto\" needs the pre-change model 'pre'");
            tc = ts_constant(*pre);
            tc.order_s = s;
        } else {
            tc = user_constant(tcj.get<double>(), s);
        }
        const std::size_t mc = j.value("mc_size", std::size_t{512});
        const std::uint64_t seed = j.value("seed", std::uint64_t{0});
        const CostMetric metric(s);

        std::optional<double> wpq;
        std::string wpq_source = "none";
        if (j.contains("wpq")) {
            wpq = j.at("wpq").get<double>();
            wpq_source = "given";
        } else if (j.contains("post")) {
            require(pre.has_value(), "'post' needs the pre-change model 'pre'");
            wpq = wasserstein_between_models(*pre, parse_model_spec(j.at("post").get<std::string>()), metric, mc, seed);
            wpq_source = "estimated";
        }

        std::size_t n = 0;
        std::optional<double> cap;
        if (j.contains("train")) {
            require(pre.has_value(), "'train' needs the pre-change model 'pre'");
            EmpiricalDistribution pn(read_csv_file(j.at("train").get<std::string>()));
            n = pn.size();
            cap = wasserstein_to_prechange(*pre, pn, metric, mc, seed);
        } else {
            n = j.at("n").get<std::size_t>();
        }
        const double lower = radius_lower_bound(delta, tc, s, n);
        json res{{"lower", lower}, {"upper", nullptr}, {"n_min", nullptr},
                 {"empirical_cap", cap ? json(*cap) : json(nullptr)}, {"feasible", nullptr}};
        if (wpq) {
            const RadiusReport rep =
                radius_report(n, delta, tc, s, *wpq, cap.value_or(std::numeric_limits<double>::infinity()));
            res["upper"] = rep.upper;
            res["n_min"] = rep.n_min;
            res["feasible"] = rep.feasible;
        } else if (cap) {
            res["feasible"] = lower <= *cap;
        }
        res["n"] = n;
        res["delta"] = delta;
        res["order_s"] = s;
        res["tc"] = {{"c", tc.c}, {"source", to_string(tc.source)}};
        res["wpq"] = wpq ? json(*wpq) : json(nullptr);
        res["wpq_source"] = wpq_source;
        *out_json = dup_string(res.dump(2) + "\n");
        return DRC_OK;
    });
}

}  // extern "C"
