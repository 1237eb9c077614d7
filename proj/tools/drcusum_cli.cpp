// Command-line front end. Talks to the library only through the C API.
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "drcusum/drcusum.h"

using nlohmann::json;

namespace {

enum Exit { kOk = 0, kInternal = 1, kUsage = 2, kData = 3, kSolver = 4 };

struct Failure {
    int code;
    std::string message;
};

int exit_code(drc_status s) {
    switch (s) {
        case DRC_OK: return kOk;
        case DRC_INVALID_ARGUMENT: return kUsage;
        case DRC_DIMENSION_MISMATCH:
        case DRC_DATA:
        case DRC_IO: return kData;
        case DRC_SOLVER:
        case DRC_NOT_CONVERGED: return kSolver;
        case DRC_INTERNAL: return kInternal;
    }
    return kInternal;
}

void check(drc_status s, const std::string& context = {}) {
    if (s == DRC_OK) return;
    std::string msg = drc_last_error();
    if (!context.empty()) msg = context + ": " + msg;
    throw Failure{exit_code(s), msg};
}

struct CString {
    char* p = nullptr;
    ~CString() { drc_string_free(p); }
    std::string str() const { return p ? std::string(p) : std::string(); }
};

template <class T, void (*Free)(T*)>
struct Handle {
    T* p = nullptr;
    Handle() = default;
    Handle(const Handle&) = delete;
    Handle(Handle&& o) noexcept : p(o.p) { o.p = nullptr; }
    ~Handle() { Free(p); }
};
using Model = Handle<drc_model, drc_model_free>;
using Scorer = Handle<drc_scorer, drc_scorer_free>;
using Detector = Handle<drc_detector, drc_detector_free>;
using Csv = Handle<drc_csv, drc_csv_close>;

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Failure{kData, "cannot open '" + path + "'"};
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Writes to a sibling temporary and renames, so readers never see a partial file.
void write_atomic(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Failure{kData, "cannot write '" + path + "'"};
        out << content;
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp);
            throw Failure{kData, "cannot write '" + path + "'"};
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw Failure{kData, "cannot write '" + path + "': " + ec.message()};
    }
}

void emit(const std::string& out_path, const std::string& content) {
    if (out_path.empty() || out_path == "-") {
        std::cout << content;
        std::cout.flush();
    } else {
        write_atomic(out_path, content);
    }
}

std::string fnv1a(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Run manifest: the command line that reproduces this run plus digests of
// every input file it read.
struct Manifest {
    std::string command;
    std::vector<std::string> args;
    json options = json::object();
    json inputs = json::array();
    std::string path;

    void input(const std::string& file, const std::string& content) {
        inputs.push_back({{"path", file}, {"fnv1a64", fnv1a(content)}});
    }

    std::string dump() const {
        return json{{"tool", "drcusum"},
                    {"version", drc_version()},
                    {"command", command},
                    {"args", args},
                    {"options", options},
                    {"inputs", inputs}}
                   .dump(2) +
               "\n";
    }

    void echo() const {
        const std::string text = dump();
        std::cerr << text;
        if (!path.empty()) write_atomic(path, text);
    }
};

std::string model_spec_input(Manifest& m, const std::string& spec) {
    const std::string prefix = "empirical:";
    if (spec.rfind(prefix, 0) == 0) {
        const std::string path = spec.substr(prefix.size());
        m.input(path, read_file(path));
    }
    return spec;
}

Model parse_model(const std::string& spec) {
    Model m;
    check(drc_model_parse(spec.c_str(), &m.p), "model '" + spec + "'");
    return m;
}

std::vector<Scorer> load_scorers(Manifest& m, const std::vector<std::string>& paths, json* docs = nullptr) {
    std::vector<Scorer> out;
    for (const auto& path : paths) {
        const std::string text = read_file(path);
        m.input(path, text);
        Scorer s;
        check(drc_scorer_from_json(text.c_str(), &s.p), path);
        if (docs) docs->push_back(json::parse(text));
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------

struct LfdSolveArgs {
    std::string pre, train, out, method = "auto";
    double radius = 0.0, order_s = 2.0, tol = 1e-8;
    int max_iterations = 10000;
    std::size_t mc_size = 200000;
    std::uint64_t mc_seed = 0x6c6664ULL;
};

int run_lfd_solve(const LfdSolveArgs& a, Manifest& m) {
    model_spec_input(m, a.pre);
    m.input(a.train, read_file(a.train));
    m.echo();
    Model pre = parse_model(a.pre);
    double* data = nullptr;
    std::size_t rows = 0, dim = 0;
    check(drc_csv_read_file(a.train.c_str(), &data, &rows, &dim), "training data");
    std::unique_ptr<double, void (*)(double*)> guard(data, drc_doubles_free);
    const json options{{"tol", a.tol},         {"max_iterations", a.max_iterations}, {"method", a.method},
                       {"mc_size", a.mc_size}, {"mc_seed", a.mc_seed}};
    Scorer scorer;
    const drc_status st =
        drc_lfd_fit(pre.p, data, rows, dim, a.radius, a.order_s, options.dump().c_str(), &scorer.p);
    if (st != DRC_OK && st != DRC_NOT_CONVERGED) check(st, "lfd-solve");
    CString summary;
    check(drc_scorer_summary(scorer.p, &summary.p));
    if (st == DRC_NOT_CONVERGED) {
        std::cout << summary.str() << "\n";
        throw Failure{kSolver, "dual solver did not converge; no scorer written"};
    }
    CString doc;
    check(drc_scorer_to_json(scorer.p, &doc.p));
    write_atomic(a.out, doc.str());
    std::cout << summary.str() << "\n";
    return kOk;
}

struct DetectArgs {
    std::vector<std::string> scorers;
    std::optional<double> threshold, gamma;
    std::string stream = "-";
};

int run_detect(const DetectArgs& a, Manifest& m) {
    std::vector<Scorer> scorers = load_scorers(m, a.scorers);
    double b = 0.0;
    if (a.gamma) {
        b = drc_threshold_for_gamma(*a.gamma, scorers.size());
        if (!std::isfinite(b)) throw Failure{kUsage, drc_last_error()};
    } else {
        b = *a.threshold;
    }
    m.options["threshold_resolved"] = b;
    m.options["scenarios"] = scorers.size();
    if (a.stream != "-") m.input(a.stream, read_file(a.stream));
    m.echo();

    std::vector<const drc_scorer*> raw;
    for (const auto& s : scorers) raw.push_back(s.p);
    Detector det;
    check(drc_detector_new(raw.data(), raw.size(), b, &det.p));
    Csv csv;
    check(drc_csv_open(a.stream == "-" ? nullptr : a.stream.c_str(), &csv.p), "stream");
    const std::size_t dim = drc_scorer_dim(scorers.front().p);
    std::vector<double> row(dim);
    int stopped = 0;
    while (!stopped) {
        int has_row = 0;
        std::size_t width = 0;
        const drc_status st = drc_csv_next(csv.p, row.data(), row.size(), &width, &has_row);
        const std::string where =
            (a.stream == "-" ? std::string("<stdin>") : a.stream) + ":" + std::to_string(drc_csv_line(csv.p));
        if (st == DRC_DIMENSION_MISMATCH) throw Failure{kData, where + ": row has more columns than the scorer dimension"};
        check(st);
        if (!has_row) break;
        if (width != dim) throw Failure{kData, where + ": expected " + std::to_string(dim) + " columns"};
        check(drc_detector_step(det.p, row.data(), dim, &stopped), where);
    }
    CString report;
    check(drc_detector_report(det.p, &report.p));
    json r = json::parse(report.str());
    r["outcome"] = stopped ? "stopped" : "exhausted";
    std::cout << r.dump() << "\n";
    return kOk;
}

struct SimArgs {
    std::vector<std::string> scorers;
    std::string pre, post, out;
    std::vector<double> thresholds;
    std::optional<double> gamma;
    std::size_t trials = 500, cap = 0;
    std::uint64_t seed = 1;
    unsigned threads = 0;
    double target = 0.0;
    std::vector<double> bracket;
};

json sim_request(const SimArgs& a, Manifest& m) {
    json docs = json::array();
    std::vector<Scorer> scorers = load_scorers(m, a.scorers, &docs);
    json req{{"scorers", docs}, {"trials", a.trials}, {"cap", a.cap}, {"seed", a.seed}, {"threads", a.threads}};
    if (!a.pre.empty()) req["pre"] = model_spec_input(m, a.pre);
    if (!a.post.empty()) req["post"] = model_spec_input(m, a.post);
    std::vector<double> thresholds = a.thresholds;
    if (a.gamma) {
        const double b = drc_threshold_for_gamma(*a.gamma, scorers.size());
        if (!std::isfinite(b)) throw Failure{kUsage, drc_last_error()};
        thresholds.push_back(b);
        m.options["threshold_resolved"] = b;
    }
    if (!thresholds.empty()) req["thresholds"] = thresholds;
    return req;
}

int run_sim(const SimArgs& a, Manifest& m, bool wadd) {
    const json req = sim_request(a, m);
    if (!req.contains("thresholds")) throw Failure{kUsage, "give --b or --gamma"};
    m.echo();
    CString res;
    check(wadd ? drc_sim_wadd(req.dump().c_str(), &res.p) : drc_sim_mtfa(req.dump().c_str(), &res.p));
    emit(a.out, json::parse(res.str()).dump(2) + "\n");
    return kOk;
}

int run_calibrate(const SimArgs& a, Manifest& m) {
    json req = sim_request(a, m);
    req["target"] = a.target;
    if (!a.bracket.empty()) req["bracket"] = a.bracket;
    m.echo();
    CString res;
    check(drc_calibrate(req.dump().c_str(), &res.p));
    emit(a.out, json::parse(res.str()).dump(2) + "\n");
    return kOk;
}

struct CurveArgs {
    std::string config, out;
    std::optional<unsigned> threads;
};

int run_curve(const CurveArgs& a, Manifest& m, const char* kind) {
    const std::string text = read_file(a.config);
    m.input(a.config, text);
    json cfg;
    try {
        cfg = json::parse(text);
    } catch (const json::exception& e) {
        throw Failure{kData, a.config + ": " + e.what()};
    }
    if (!cfg.is_object()) throw Failure{kData, a.config + ": config must be a JSON object"};
    const std::string given = cfg.value("kind", std::string(kind));
    if (given != kind) throw Failure{kUsage, a.config + ": config kind '" + given + "' does not match command"};
    cfg["kind"] = kind;
    if (a.threads) cfg["threads"] = *a.threads;
    CString normalized;
    check(drc_experiment_normalize(cfg.dump().c_str(), &normalized.p), a.config);
    m.options["config_resolved"] = json::parse(normalized.str());
    m.echo();
    CString csv;
    check(drc_experiment_run(cfg.dump().c_str(), &csv.p));
    emit(a.out, csv.str());
    return kOk;
}

struct RadiusArgs {
    double delta = 0.0, order_s = 2.0;
    std::string tc = "auto", pre, post, train, out;
    std::optional<std::size_t> n;
    std::optional<double> wpq;
    bool estimate_wpq = false;
    std::size_t mc_size = 512;
    std::uint64_t seed = 0;
};

int run_radius(const RadiusArgs& a, Manifest& m) {
    json req{{"delta", a.delta}, {"order_s", a.order_s}, {"mc_size", a.mc_size}, {"seed", a.seed}};
    if (a.tc == "auto") {
        req["tc"] = "auto";
    } else {
        try {
            std::size_t used = 0;
            req["tc"] = std::stod(a.tc, &used);
            if (used != a.tc.size()) throw std::invalid_argument(a.tc);
        } catch (const std::exception&) {
            throw Failure{kUsage, "--tc must be a number or 'auto'"};
        }
    }
    if (!a.pre.empty()) req["pre"] = model_spec_input(m, a.pre);
    if (!a.train.empty()) {
        m.input(a.train, read_file(a.train));
        req["train"] = a.train;
    }
    if (a.n) req["n"] = *a.n;
    if (a.estimate_wpq) {
        if (a.pre.empty() || a.post.empty()) throw Failure{kUsage, "--estimate-wpq needs --pre and --post"};
        req["post"] = model_spec_input(m, a.post);
    } else if (a.wpq) {
        req["wpq"] = *a.wpq;
    }
    if (!a.n && a.train.empty()) throw Failure{kUsage, "give --n or --train"};
    m.echo();
    CString res;
    check(drc_radius_report(req.dump().c_str(), &res.p));
    emit(a.out, res.str());
    return kOk;
}

// ---------------------------------------------------------------------------

constexpr const char* kModelHelp =
    "Model specs: gaussian:mu=M,sigma=S (or var=V) | diag:mu=a|b|..,var=x|y|.. | beta:a=A,b=B | "
    "empirical:<csv path>";

void record_options(const CLI::App* sub, Manifest& m) {
    for (const CLI::Option* opt : sub->get_options()) {
        const std::string name = opt->get_name(false, true);
        if (name.empty() || name.find("--help") != std::string::npos) continue;
        const auto& res = opt->results();
        if (res.empty()) {
            const std::string def = opt->get_default_str();
            m.options[name] = def.empty() ? json(nullptr) : json(def);
        } else if (res.size() == 1) {
            m.options[name] = res.front();
        } else {
            m.options[name] = res;
        }
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);

    // --replay MANIFEST re-executes the recorded command after checking that
    // the recorded inputs are unchanged.
    if (!args.empty() && args.front() == "--replay") {
        if (args.size() != 2) throw Failure{kUsage, "usage: drcusum --replay MANIFEST"};
        json man;
        try {
            man = json::parse(read_file(args[1]));
        } catch (const json::exception& e) {
            throw Failure{kData, args[1] + ": " + e.what()};
        }
        for (const auto& in : man.at("inputs")) {
            const std::string path = in.at("path");
            if (fnv1a(read_file(path)) != in.at("fnv1a64").get<std::string>())
                throw Failure{kData, "input '" + path + "' changed since the manifest was written"};
        }
        std::vector<std::string> replay{argv[0], man.at("command").get<std::string>()};
        for (const auto& s : man.at("args")) replay.push_back(s.get<std::string>());
        std::vector<char*> ptrs;
        for (auto& s : replay) ptrs.push_back(s.data());
        return run(static_cast<int>(ptrs.size()), ptrs.data());
    }

    CLI::App app{"Distributionally robust CuSum change detection"};
    app.set_version_flag("--version", std::string(drc_version()));
    app.require_subcommand(1);
    app.footer(kModelHelp);

    std::string manifest_path;
    auto add_manifest = [&](CLI::App* sub) {
        sub->add_option("--manifest", manifest_path, "Also write the run manifest to this file");
    };

    LfdSolveArgs lfd;
    auto* s_lfd = app.add_subcommand("lfd-solve", "Fit the least-favorable distribution and write a scorer");
    s_lfd->add_option("--pre", lfd.pre, "Pre-change model spec")->required();
    s_lfd->add_option("--train", lfd.train, "Training samples (CSV)")->required();
    s_lfd->add_option("--radius", lfd.radius, "Wasserstein radius r (> 0)")->required();
    s_lfd->add_option("--order-s", lfd.order_s, "Wasserstein order s (>= 1)")->capture_default_str();
    s_lfd->add_option("--out", lfd.out, "Output scorer JSON")->required();
    s_lfd->add_option("--tol", lfd.tol, "Gradient-norm tolerance")->capture_default_str();
    s_lfd->add_option("--max-iterations", lfd.max_iterations, "Iteration cap")->capture_default_str();
    s_lfd->add_option("--method", lfd.method, "Normalizer evaluation")
        ->check(CLI::IsMember({"auto", "analytic", "quadrature", "samples"}))
        ->capture_default_str();
    s_lfd->add_option("--mc-size", lfd.mc_size, "Model draws for the sample-average path")->capture_default_str();
    s_lfd->add_option("--mc-seed", lfd.mc_seed, "Seed for the sample-average path")->capture_default_str();
    add_manifest(s_lfd);

    DetectArgs det;
    auto* s_det = app.add_subcommand("detect", "Run a (multi-scenario) DR-CuSum detector over a stream");
    s_det->add_option("--scorer", det.scorers, "Scorer JSON; repeat once per scenario")->required();
    auto* o_thr = s_det->add_option("--threshold", det.threshold, "Alarm threshold b");
    auto* o_gam = s_det->add_option("--gamma", det.gamma, "Target MTFA; sets b = log(M gamma)");
    o_thr->excludes(o_gam);
    s_det->add_option("--stream", det.stream, "Observation CSV, or - for stdin")->capture_default_str();
    add_manifest(s_det);

    SimArgs sim;
    auto add_sim = [&](CLI::App* sub, bool thresholds) {
        sub->add_option("--scorer", sim.scorers, "Scorer JSON; repeat once per scenario")->required();
        sub->add_option("--pre", sim.pre, "Pre-change model spec (default: the scorer's)");
        if (thresholds) {
            sub->add_option("--b", sim.thresholds, "Threshold(s)");
            sub->add_option("--gamma", sim.gamma, "Target MTFA; adds b = log(M gamma)");
        }
        sub->add_option("--trials", sim.trials, "Monte-Carlo trials")->capture_default_str();
        sub->add_option("--cap", sim.cap, "Censoring cap in steps (0: automatic)")->capture_default_str();
        sub->add_option("--seed", sim.seed, "Base seed")->capture_default_str();
        sub->add_option("--threads", sim.threads, "Worker threads (0: all cores)")->capture_default_str();
        sub->add_option("--out", sim.out, "Output JSON (default stdout)");
        add_manifest(sub);
    };
    auto* s_mtfa = app.add_subcommand("sim-mtfa", "Estimate the mean time to false alarm");
    add_sim(s_mtfa, true);
    auto* s_wadd = app.add_subcommand("sim-wadd", "Estimate the worst-case average detection delay");
    add_sim(s_wadd, true);
    s_wadd->add_option("--post", sim.post, "True post-change model spec")->required();
    auto* s_cal = app.add_subcommand("calibrate", "Find the smallest threshold reaching a target MTFA");
    add_sim(s_cal, false);
    s_cal->add_option("--target", sim.target, "Target MTFA")->required();
    s_cal->add_option("--bracket", sim.bracket, "Search interval LO HI")->expected(2);

    CurveArgs curve;
    auto add_curve = [&](CLI::App* sub) {
        sub->add_option("--config", curve.config, "Experiment config (JSON)")->required();
        sub->add_option("--out", curve.out, "Output CSV (default stdout)");
        sub->add_option("--threads", curve.threads, "Worker threads; does not change results");
        add_manifest(sub);
    };
    auto* s_oc = app.add_subcommand("oc-curve", "Operating characteristic sweep (WADD vs MTFA)");
    add_curve(s_oc);
    auto* s_kl = app.add_subcommand("kl-curve", "Least-favorable KL divergence over a radius grid");
    add_curve(s_kl);

    RadiusArgs rad;
    auto* s_rad = app.add_subcommand("radius", "Radius-selection bounds as JSON");
    s_rad->add_option("--delta", rad.delta, "Confidence level delta in (0,1)")->required();
    s_rad->add_option("--order-s", rad.order_s, "Wasserstein order s")->capture_default_str();
    s_rad->add_option("--tc", rad.tc, "T_s constant c, or auto from --pre")->capture_default_str();
    s_rad->add_option("--n", rad.n, "Number of training samples");
    auto* o_wpq = s_rad->add_option("--wpq", rad.wpq, "W_s(P, Q)");
    auto* o_est = s_rad->add_flag("--estimate-wpq", rad.estimate_wpq, "Estimate W_s(P, Q) from --pre and --post");
    o_wpq->excludes(o_est);
    s_rad->add_option("--pre", rad.pre, "Pre-change model spec");
    s_rad->add_option("--post", rad.post, "Post-change model spec (with --estimate-wpq)");
    s_rad->add_option("--train", rad.train, "Training CSV; adds the empirical cap W_s(Q, Pn)");
    s_rad->add_option("--mc-size", rad.mc_size, "Pre-change draws for Wasserstein estimates")->capture_default_str();
    s_rad->add_option("--seed", rad.seed, "Seed for Wasserstein estimates")->capture_default_str();
    s_rad->add_option("--out", rad.out, "Output JSON (default stdout)");
    add_manifest(s_rad);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    CLI::App* sub = app.get_subcommands().front();
    Manifest m;
    m.command = sub->get_name();
    m.path = manifest_path;
    bool after_command = false;
    for (const auto& s : args) {
        if (after_command) m.args.push_back(s);
        if (s == m.command) after_command = true;
    }
    // --manifest only controls where the manifest goes, so replays skip it.
    for (std::size_t i = 0; i < m.args.size(); ++i) {
        if (m.args[i] == "--manifest" && i + 1 < m.args.size()) {
            m.args.erase(m.args.begin() + static_cast<long>(i), m.args.begin() + static_cast<long>(i) + 2);
            break;
        }
        if (m.args[i].rfind("--manifest=", 0) == 0) {
            m.args.erase(m.args.begin() + static_cast<long>(i));
            break;
        }
    }
    record_options(sub, m);
    m.options.erase("--manifest");

    if (sub == s_lfd) return run_lfd_solve(lfd, m);
    if (sub == s_det) {
        if (!det.threshold && !det.gamma) throw Failure{kUsage, "give --threshold or --gamma"};
        return run_detect(det, m);
    }
    if (sub == s_mtfa) return run_sim(sim, m, false);
    if (sub == s_wadd) return run_sim(sim, m, true);
    if (sub == s_cal) return run_calibrate(sim, m);
    if (sub == s_oc) return run_curve(curve, m, "oc");
    if (sub == s_kl) return run_curve(curve, m, "kl");
    return run_radius(rad, m);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Failure& f) {
        std::cerr << "drcusum: " << f.message << "\n";
        return f.code;
    } catch (const std::exception& e) {
        std::cerr << "drcusum: " << e.what() << "\n";
        return kInternal;
    }
}
