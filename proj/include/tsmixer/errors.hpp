#pragma once

#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tsmixer {

enum class ErrorKind {
    dimension,     // incompatible tensor shapes
    rank,          // operation undefined for the tensor rank
    parameter,     // out-of-range scalar argument
    contract,      // API misuse (e.g. non-scalar loss)
    numeric,       // NaN/Inf encountered
    config,        // invalid or inconsistent configuration
    state,         // stored state does not match its use
    schema,        // dataset schema violation
    parse,         // malformed input text
    domain,        // argument outside a function's domain
    precondition,  // documented precondition not met
    metric,        // metric undefined for the given data
    spec,          // hierarchy definition invalid
    io,            // filesystem failure
};

inline std::string_view to_string(ErrorKind kind) noexcept;

/// Single exception type for the library; `kind()` distinguishes failure classes.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// Process exit code for an error: 1 for user/config problems, 2 for internal/numeric ones.
inline int exit_code_for(ErrorKind kind) noexcept {
    return (kind == ErrorKind::numeric || kind == ErrorKind::contract) ? 2 : 1;
}

inline std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::rank: return "rank";
        case ErrorKind::parameter: return "parameter";
        case ErrorKind::contract: return "contract";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::config: return "config";
        case ErrorKind::state: return "state";
        case ErrorKind::schema: return "schema";
        case ErrorKind::parse: return "parse";
        case ErrorKind::domain: return "domain";
        case ErrorKind::precondition: return "precondition";
        case ErrorKind::metric: return "metric";
        case ErrorKind::spec: return "spec";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

/// Receives non-fatal diagnostics (zero-variance columns, nonpositive scales, ...).
/// The default handler writes one line to stderr.
using WarningHandler = std::function<void(std::string_view)>;

inline WarningHandler& warning_handler() {
    static WarningHandler handler = [](std::string_view msg) {
        std::fprintf(stderr, "warning: %.*s\n", static_cast<int>(msg.size()), msg.data());
    };
    return handler;
}

inline void warn(std::string_view message) { warning_handler()(message); }

}  // namespace tsmixer
