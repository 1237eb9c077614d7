#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "drcusum/drcusum.h"

using nlohmann::json;

namespace {

std::string take(char* s) {
    std::string out = s ? s : "";
    drc_string_free(s);
    return out;
}

drc_model* model(const char* spec) {
    drc_model* m = nullptr;
    EXPECT_EQ(drc_model_parse(spec, &m), DRC_OK) << drc_last_error();
    return m;
}

drc_scorer* fit(const std::vector<double>& xs, double radius) {
    drc_model* pre = model("gaussian:mu=0,sigma=1");
    drc_scorer* s = nullptr;
    EXPECT_EQ(drc_lfd_fit(pre, xs.data(), xs.size(), 1, radius, 2.0, nullptr, &s), DRC_OK) << drc_last_error();
    drc_model_free(pre);
    return s;
}

}  // namespace

TEST(CApi, VersionAndStatusNames) {
    EXPECT_STRNE(drc_version(), "");
    EXPECT_STREQ(drc_status_name(DRC_OK), "ok");
    EXPECT_STREQ(drc_status_name(DRC_NOT_CONVERGED), "not_converged");
}

TEST(CApi, ModelParseErrors) {
    drc_model* m = nullptr;
    EXPECT_EQ(drc_model_parse("cauchy:x=1", &m), DRC_INVALID_ARGUMENT);
    EXPECT_EQ(m, nullptr);
    EXPECT_NE(std::string(drc_last_error()), "");
    EXPECT_EQ(drc_model_parse(nullptr, &m), DRC_INVALID_ARGUMENT);
    m = model("diag:mu=0|1,var=1|4");
    EXPECT_EQ(drc_model_dim(m), 2u);
    const auto j = json::parse(take([&] {
        char* s = nullptr;
        drc_model_to_json(m, &s);
        return s;
    }()));
    EXPECT_EQ(j.at("kind"), "gaussian");
    EXPECT_EQ(j.at("variance"), json({1.0, 4.0}));
    drc_model_free(m);
}

TEST(CApi, FitMatchesClosedForm) {
    drc_scorer* s = fit({1.0}, 0.3);
    ASSERT_NE(s, nullptr);
    char* out = nullptr;
    ASSERT_EQ(drc_scorer_summary(s, &out), DRC_OK);
    const auto j = json::parse(take(out));
    const double rho = 0.09, w = 1.0;
    const double cf = (1 + std::sqrt(1 + 4 * rho * w * w) - 2 * rho) / (4 * rho);
    EXPECT_NEAR(j.at("lambda").get<double>() / cf, 1.0, 1e-4);
    EXPECT_TRUE(j.at("converged").get<bool>());
    drc_scorer_free(s);
}

TEST(CApi, HugeRadiusGivesZeroLlr) {
    drc_scorer* s = fit({0.5, 1.5}, 100.0);
    double v = 1.0;
    const double x = 0.7;
    ASSERT_EQ(drc_scorer_llr(s, &x, 1, &v), DRC_OK);
    EXPECT_EQ(v, 0.0);
    drc_scorer_free(s);
}

TEST(CApi, ScorerJsonRoundTrip) {
    drc_scorer* s = fit({0.5, 1.5, 0.2}, 0.25);
    char* doc = nullptr;
    ASSERT_EQ(drc_scorer_to_json(s, &doc), DRC_OK);
    drc_scorer* t = nullptr;
    ASSERT_EQ(drc_scorer_from_json(doc, &t), DRC_OK) << drc_last_error();
    drc_string_free(doc);
    for (double x : {-1.0, 0.3, 2.2}) {
        double a = 0, b = 0;
        drc_scorer_llr(s, &x, 1, &a);
        drc_scorer_llr(t, &x, 1, &b);
        EXPECT_EQ(a, b);
    }
    const double xy[2] = {1.0, 2.0};
    double v = 0;
    EXPECT_EQ(drc_scorer_llr(s, xy, 2, &v), DRC_DIMENSION_MISMATCH);
    EXPECT_EQ(drc_scorer_from_json("{\"format\":\"nope\"}", &t), DRC_DATA);
    drc_scorer_free(s);
    drc_scorer_free(t);
}

TEST(CApi, DetectorStopsAndReports) {
    drc_scorer* s = fit({2.0, 2.5}, 0.2);
    const drc_scorer* list[] = {s};
    const double b = drc_threshold_for_gamma(100.0, 2);
    EXPECT_DOUBLE_EQ(b, std::log(200.0));
    EXPECT_TRUE(std::isnan(drc_threshold_for_gamma(1.0, 1)));
    drc_detector* d = nullptr;
    ASSERT_EQ(drc_detector_new(list, 1, 3.0, &d), DRC_OK);
    int stopped = 0, steps = 0;
    const double x = 2.2;
    while (!stopped && steps < 1000) {
        ASSERT_EQ(drc_detector_step(d, &x, 1, &stopped), DRC_OK);
        ++steps;
    }
    char* out = nullptr;
    ASSERT_EQ(drc_detector_report(d, &out), DRC_OK);
    const auto j = json::parse(take(out));
    EXPECT_TRUE(j.at("stopped").get<bool>());
    EXPECT_EQ(j.at("stopping_time").get<int>(), steps);
    EXPECT_EQ(j.at("argmax_scenario").get<int>(), 1);
    drc_detector_free(d);
    drc_scorer_free(s);
}

TEST(CApi, DetectorRejectsBadInput) {
    drc_detector* d = nullptr;
    EXPECT_EQ(drc_detector_new(nullptr, 0, 3.0, &d), DRC_INVALID_ARGUMENT);
    drc_scorer* s = fit({1.0}, 0.3);
    const drc_scorer* list[] = {s};
    ASSERT_EQ(drc_detector_new(list, 1, 3.0, &d), DRC_OK);
    const double xy[2] = {0, 0};
    int stopped = 0;
    EXPECT_EQ(drc_detector_step(d, xy, 2, &stopped), DRC_DIMENSION_MISMATCH);
    const double nan = NAN;
    EXPECT_NE(drc_detector_step(d, &nan, 1, &stopped), DRC_OK);
    drc_detector_free(d);
    drc_scorer_free(s);
}

TEST(CApi, CsvReadAndStream) {
    const std::string path = testing::TempDir() + "capi_rows.csv";
    {
        std::ofstream f(path);
        f << "x,y\n1,2\n3,4\n";
    }
    double* data = nullptr;
    size_t rows = 0, dim = 0;
    ASSERT_EQ(drc_csv_read_file(path.c_str(), &data, &rows, &dim), DRC_OK);
    EXPECT_EQ(rows, 2u);
    EXPECT_EQ(dim, 2u);
    EXPECT_EQ(data[3], 4.0);
    drc_doubles_free(data);
    EXPECT_EQ(drc_csv_read_file("/nonexistent/x.csv", &data, &rows, &dim), DRC_IO);

    drc_csv* csv = nullptr;
    ASSERT_EQ(drc_csv_open(path.c_str(), &csv), DRC_OK);
    double row[4];
    int has = 0, count = 0;
    while (drc_csv_next(csv, row, 4, &dim, &has) == DRC_OK && has) ++count;
    EXPECT_EQ(count, 2);
    drc_csv_close(csv);
    std::remove(path.c_str());
}

TEST(CApi, SimulationRequests) {
    drc_scorer* s = fit({0.5, 1.0, 0.2}, 0.2);
    char* doc = nullptr;
    drc_scorer_to_json(s, &doc);
    const json scorer = json::parse(take(doc));
    json req{{"scorers", {scorer}}, {"pre", "gaussian:mu=0,sigma=1"}, {"thresholds", {2.0, 3.0}}, {"trials", 50}, {"seed", 3}};
    char* out = nullptr;
    ASSERT_EQ(drc_sim_mtfa(req.dump().c_str(), &out), DRC_OK) << drc_last_error();
    const auto a = json::parse(take(out));
    ASSERT_EQ(a.at("points").size(), 2u);
    EXPECT_GE(a["points"][1]["mean"].get<double>(), a["points"][0]["mean"].get<double>());
    ASSERT_EQ(drc_sim_mtfa(req.dump().c_str(), &out), DRC_OK);
    EXPECT_EQ(json::parse(take(out)), a);

    req["post"] = "gaussian:mu=0.5,sigma=1";
    ASSERT_EQ(drc_sim_wadd(req.dump().c_str(), &out), DRC_OK) << drc_last_error();
    EXPECT_EQ(json::parse(take(out)).at("measure"), "wadd");

    json cal{{"scorers", {scorer}}, {"pre", "gaussian:mu=0,sigma=1"}, {"target", 50.0}, {"trials", 100}};
    ASSERT_EQ(drc_calibrate(cal.dump().c_str(), &out), DRC_OK) << drc_last_error();
    const auto c = json::parse(take(out));
    EXPECT_LT(c.at("b").get<double>(), std::log(50.0) + 3.0);

    json bad = req;
    bad["bogus"] = 1;
    EXPECT_EQ(drc_sim_mtfa(bad.dump().c_str(), &out), DRC_INVALID_ARGUMENT);
    EXPECT_EQ(drc_sim_mtfa("not json", &out), DRC_INVALID_ARGUMENT);
    drc_scorer_free(s);
}

TEST(CApi, RadiusReport) {
    const json req{{"delta", std::exp(-1.0)}, {"order_s", 1.0}, {"tc", 1.0}, {"n", 8}, {"wpq", 0.5}};
    char* out = nullptr;
    ASSERT_EQ(drc_radius_report(req.dump().c_str(), &out), DRC_OK) << drc_last_error();
    const auto j = json::parse(take(out));
    EXPECT_NEAR(j.at("lower").get<double>(), 0.5, 1e-15);
    EXPECT_NEAR(j.at("upper").get<double>(), 0.0, 1e-15);
    EXPECT_FALSE(j.at("feasible").get<bool>());
    const json no_wpq{{"delta", 0.05}, {"order_s", 2.0}, {"tc", 1.0}, {"n", 100}};
    ASSERT_EQ(drc_radius_report(no_wpq.dump().c_str(), &out), DRC_OK);
    EXPECT_TRUE(json::parse(take(out)).at("upper").is_null());
}

TEST(CApi, ExperimentKlCurve) {
    const json cfg{{"kind", "kl"}, {"radii", {0.1, 0.5}}, {"training_sets", 1}, {"n", 5}};
    char* out = nullptr;
    ASSERT_EQ(drc_experiment_run(cfg.dump().c_str(), &out), DRC_OK) << drc_last_error();
    const std::string csv = take(out);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "set,radius,dual_value,lambda,iterations,converged");
    ASSERT_EQ(drc_experiment_normalize(cfg.dump().c_str(), &out), DRC_OK);
    EXPECT_EQ(json::parse(take(out)).at("n"), 5);
}
