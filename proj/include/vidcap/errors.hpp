#pragma once

#include <stdexcept>
#include <string>

namespace vidcap {

// Dimension/contract violations inside the tensor engine and kernels.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable/corrupt data files or malformed records (CLI exit code 3).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training produced NaN loss/gradients (CLI exit code 4).
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace exit_code {
constexpr int ok = 0;
constexpr int config_error = 2;
constexpr int data_error = 3;
constexpr int divergence = 4;
}  // namespace exit_code

}  // namespace vidcap
