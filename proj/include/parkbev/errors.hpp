#pragma once

#include <stdexcept>
#include <string>

namespace parkbev {

// Bad configuration or malformed input files. CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure (non-convergence, NaN loss, ...). CLI exit code 3.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace parkbev
