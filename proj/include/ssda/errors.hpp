#pragma once

#include <stdexcept>
#include <string>

namespace ssda {

/// Bad configuration or invalid user input (CLI exit code 1).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical failure during training or solving (CLI exit code 2).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// File system / parsing failure (CLI exit code 3).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace ssda
