#pragma once

#include <cstddef>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "drcusum/distributions.hpp"

namespace drcusum {

// Incremental reader for numeric CSV: one observation per row, optional
// header (a first row that does not parse as numbers), '.' decimal separator.
// The dimension is fixed by the first data row; a row of any other width is
// a data error naming the offending line.
class CsvReader {
public:
    explicit CsvReader(std::istream& in, std::string source = "<stream>");

    std::optional<std::vector<double>> next();

    std::size_t dim() const noexcept { return dim_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::istream& in_;
    std::string source_;
    std::size_t line_ = 0;
    std::size_t dim_ = 0;
    bool first_ = true;
};

std::vector<std::vector<double>> read_csv(std::istream& in, const std::string& source = "<stream>");
std::vector<std::vector<double>> read_csv_file(const std::string& path);

// Compact model grammar used on the command line and in config files:
//   gaussian:mu=0,sigma=1        (or var=1)
//   diag:mu=0|0|0,var=1|1|1
//   beta:a=2,b=3
//   empirical:<path to csv>
PreChangeModel parse_model_spec(std::string_view spec);

nlohmann::json model_to_json(const PreChangeModel& model);
PreChangeModel model_from_json(const nlohmann::json& j);

}  // namespace drcusum
