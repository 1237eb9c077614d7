#include "drcusum/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include "drcusum/error.hpp"

namespace drcusum {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r' || s.front() == '\n'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
        s.remove_suffix(1);
    return s;
}

std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
    return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::vector<double> parse_list(std::string_view s, const std::string& what) {
    std::vector<double> out;
    for (auto part : split(s, '|')) {
        auto v = parse_double(part);
        if (!v) fail(ErrorKind::InvalidArgument, "model spec: bad number '" + std::string(part) + "' in " + what);
        out.push_back(*v);
    }
    return out;
}

}  // namespace

CsvReader::CsvReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

std::optional<std::vector<double>> CsvReader::next() {
    std::string raw;
    while (std::getline(in_, raw)) {
        ++line_;
        std::string_view row = raw;
        if (first_ && row.size() >= 3 && static_cast<unsigned char>(row[0]) == 0xEF &&
            static_cast<unsigned char>(row[1]) == 0xBB && static_cast<unsigned char>(row[2]) == 0xBF) {
            row.remove_prefix(3);
        }
        if (trim(row).empty()) continue;
        std::vector<double> values;
        bool numeric = true;
        for (auto field : split(row, ',')) {
            auto v = parse_double(field);
            if (!v) {
                numeric = false;
                break;
            }
            values.push_back(*v);
        }
        if (!numeric) {
            if (first_) {
                first_ = false;  // header
                continue;
            }
            fail(ErrorKind::Data, source_ + ":" + std::to_string(line_) + ": malformed row");
        }
        for (double v : values) {
            if (!std::isfinite(v)) fail(ErrorKind::Data, source_ + ":" + std::to_string(line_) + ": non-finite value");
        }
        first_ = false;
        if (dim_ == 0) {
            dim_ = values.size();
        } else if (values.size() != dim_) {
            fail(ErrorKind::Data, source_ + ":" + std::to_string(line_) + ": expected " + std::to_string(dim_) +
                                      " columns, found " + std::to_string(values.size()));
        }
        return values;
    }
    return std::nullopt;
}

std::vector<std::vector<double>> read_csv(std::istream& in, const std::string& source) {
    CsvReader reader(in, source);
    std::vector<std::vector<double>> rows;
    while (auto r = reader.next()) rows.push_back(std::move(*r));
    if (rows.empty()) fail(ErrorKind::Data, source + ": no data rows");
    return rows;
}

std::vector<std::vector<double>> read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
    return read_csv(in, path);
}

PreChangeModel parse_model_spec(std::string_view spec) {
    spec = trim(spec);
    const auto colon = spec.find(':');
    if (colon == std::string_view::npos) fail(ErrorKind::InvalidArgument, "model spec '" + std::string(spec) + "' has no ':'");
    const std::string family(spec.substr(0, colon));
    const std::string_view rest = spec.substr(colon + 1);

    if (family == "empirical") {
        return PreChangeModel(EmpiricalPreChange{EmpiricalDistribution(read_csv_file(std::string(rest)))});
    }

    std::map<std::string, std::string_view> kv;
    for (auto part : split(rest, ',')) {
        const auto eq = part.find('=');
        if (eq == std::string_view::npos) fail(ErrorKind::InvalidArgument, "model spec: expected key=value, got '" + std::string(part) + "'");
        kv[std::string(trim(part.substr(0, eq)))] = part.substr(eq + 1);
    }
    auto scalar = [&](const std::string& key) -> std::optional<double> {
        auto it = kv.find(key);
        if (it == kv.end()) return std::nullopt;
        auto v = parse_double(it->second);
        if (!v) fail(ErrorKind::InvalidArgument, "model spec: bad value for '" + key + "'");
        return v;
    };

    if (family == "gaussian" || family == "normal") {
        const double mu = scalar("mu").value_or(0.0);
        double var = 1.0;
        if (auto s = scalar("sigma")) {
            var = *s * *s;
        } else if (auto v = scalar("var")) {
            var = *v;
        }
        return PreChangeModel::gaussian(mu, var);
    }
    if (family == "diag") {
        auto mu_it = kv.find("mu");
        if (mu_it == kv.end()) fail(ErrorKind::InvalidArgument, "model spec: diag needs mu=");
        auto mean = parse_list(mu_it->second, "mu");
        std::vector<double> var(mean.size(), 1.0);
        if (auto it = kv.find("var"); it != kv.end()) var = parse_list(it->second, "var");
        if (auto it = kv.find("sigma"); it != kv.end()) {
            var = parse_list(it->second, "sigma");
            for (double& v : var) v *= v;
        }
        if (var.size() == 1 && mean.size() > 1) var.assign(mean.size(), var.front());
        return PreChangeModel(GaussianDiag{std::move(mean), std::move(var)});
    }
    if (family == "beta") {
        auto a = scalar("a");
        auto b = scalar("b");
        if (!a || !b) fail(ErrorKind::InvalidArgument, "model spec: beta needs a= and b=");
        return PreChangeModel(GenericDensity::beta(*a, *b));
    }
    fail(ErrorKind::InvalidArgument, "model spec: unknown family '" + family + "'");
}

nlohmann::json model_to_json(const PreChangeModel& model) {
    using nlohmann::json;
    return std::visit(
        [](const auto& m) -> json {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Gaussian1D>) {
                return json{{"kind", "gaussian"}, {"mean", {m.mean}}, {"variance", {m.variance}}};
            } else if constexpr (std::is_same_v<T, GaussianDiag>) {
                return json{{"kind", "gaussian"}, {"mean", m.mean}, {"variance", m.variance}};
            } else if constexpr (std::is_same_v<T, GenericDensity>) {
                if (m.family.empty())
                    fail(ErrorKind::InvalidArgument, "model_to_json: ad-hoc generic density cannot be serialized");
                return json{{"kind", m.family}, {"params", m.params}};
            } else {
                return json{{"kind", "empirical"}, {"samples", m.samples.rows()}};
            }
        },
        model.variant());
}

PreChangeModel model_from_json(const nlohmann::json& j) {
    try {
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "gaussian") {
            auto mean = j.at("mean").get<std::vector<double>>();
            auto var = j.at("variance").get<std::vector<double>>();
            if (mean.size() == 1 && var.size() == 1) return PreChangeModel::gaussian(mean[0], var[0]);
            return PreChangeModel(GaussianDiag{std::move(mean), std::move(var)});
        }
        if (kind == "beta") {
            auto p = j.at("params").get<std::vector<double>>();
            require(p.size() == 2, "beta descriptor needs two params");
            return PreChangeModel(GenericDensity::beta(p[0], p[1]));
        }
        if (kind == "empirical") {
            return PreChangeModel(
                EmpiricalPreChange{EmpiricalDistribution(j.at("samples").get<std::vector<std::vector<double>>>())});
        }
        fail(ErrorKind::Data, "unknown pre-change kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::Data, std::string("pre-change descriptor: ") + e.what());
    }
}

}  // namespace drcusum
