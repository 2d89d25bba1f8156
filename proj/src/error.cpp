#include "angioseg/error.hpp"

namespace angioseg {

std::string_view kind_name(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::parse: return "parse";
        case ErrorKind::referential: return "referential";
        case ErrorKind::domain: return "domain";
        case ErrorKind::degenerate_polygon: return "degenerate-polygon";
        case ErrorKind::lookup: return "lookup";
        case ErrorKind::format: return "format";
        case ErrorKind::unsupported_format: return "unsupported-format";
        case ErrorKind::unsupported_depth: return "unsupported-depth";
        case ErrorKind::size_mismatch: return "size-mismatch";
        case ErrorKind::validity: return "validity";
        case ErrorKind::configuration: return "configuration";
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::empty_population: return "empty-population";
        case ErrorKind::undefined_reciprocal: return "undefined-reciprocal";
        case ErrorKind::sequencing: return "sequencing";
        case ErrorKind::corruption: return "corruption";
        case ErrorKind::diagnostics: return "diagnostics";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

}  // namespace angioseg
