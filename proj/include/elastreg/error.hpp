#pragma once

#include <stdexcept>
#include <string>

namespace elastreg {

/// Invalid arguments, mismatched shapes, values outside their declared range.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// File system and format failures.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values produced during optimization.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace elastreg
