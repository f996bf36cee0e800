#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace elastoreg {

/// Failure categories. The CLI prints the tag as a machine-parsable prefix.
enum class ErrorKind {
    invalid_argument,
    singular_element,
    under_constrained,
    solver_failure,
    regularization_too_weak,
    divergence,
    undefined_metric,
    incompatible,
    not_found,
    io,
    config,
};

inline std::string_view error_tag(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::singular_element: return "singular-element";
    case ErrorKind::under_constrained: return "under-constrained";
    case ErrorKind::solver_failure: return "solver-failure";
    case ErrorKind::regularization_too_weak: return "regularization-too-weak";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::undefined_metric: return "undefined-metric";
    case ErrorKind::incompatible: return "incompatible";
    case ErrorKind::not_found: return "not-found";
    case ErrorKind::io: return "io";
    case ErrorKind::config: return "config";
    }
    return "error";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
    if (!cond)
        fail(ErrorKind::invalid_argument, what);
}

} // namespace elastoreg
