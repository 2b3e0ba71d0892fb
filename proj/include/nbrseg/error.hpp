#pragma once

#include <stdexcept>
#include <string>

namespace nbrseg {

/// Malformed input text (point files, configs, scene specs).
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input that parses but violates a contract (label range, shapes, config bounds).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values or failed gradient checks.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
    if (!cond) throw ValidationError(what);
}

} // namespace detail
} // namespace nbrseg
