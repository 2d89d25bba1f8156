#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace angioseg {

enum class ErrorKind {
    parse,
    referential,
    domain,
    degenerate_polygon,
    lookup,
    format,
    unsupported_format,
    unsupported_depth,
    size_mismatch,
    validity,
    configuration,
    dimension,
    empty_population,
    undefined_reciprocal,
    sequencing,
    corruption,
    diagnostics,
    io,
};

std::string_view kind_name(ErrorKind kind) noexcept;

/// Every failure raised by the library. `kind()` distinguishes the contract
/// that was violated so callers (CLI exit codes, Python bindings) can map it.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(kind_name(kind)) + " error: " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace angioseg
