#pragma once

#include <stdexcept>
#include <string>

namespace drcusum {

enum class ErrorKind {
    InvalidArgument,
    DimensionMismatch,
    Data,
    Solver,
    NotConverged,
    Io,
};

// Single exception type for the library; the C API maps `kind()` onto its
// status codes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::InvalidArgument, what);
}

inline void require_dim(std::size_t got, std::size_t want, const char* where) {
    if (got != want) {
        fail(ErrorKind::DimensionMismatch, std::string(where) + ": dimension " + std::to_string(got) +
                                               " does not match " + std::to_string(want));
    }
}

}  // namespace drcusum
