#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace rat {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Shape or rank of an operand does not satisfy the operation's rule.
struct ShapeError : Error {
    using Error::Error;
};

/// A forward op produced NaN/Inf, or a finite-difference probe diverged.
struct NumericError : Error {
    using Error::Error;
};

/// Invalid configuration value (model, training, decode, generator).
struct ConfigError : Error {
    using Error::Error;
};

/// File missing, malformed, or failed a format/version check.
struct IoError : Error {
    using Error::Error;
};

namespace detail {

inline void format_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void format_into(std::ostringstream& os, const T& head, const Rest&... rest) {
    os << head;
    format_into(os, rest...);
}

}  // namespace detail

template <typename... Parts>
std::string concat(const Parts&... parts) {
    std::ostringstream os;
    detail::format_into(os, parts...);
    return os.str();
}

}  // namespace rat
