#pragma once

#include <stdexcept>
#include <string>

namespace dla {

// Error taxonomy. The CLI maps these onto process exit codes, so new error
// kinds should subclass one of the four below rather than std::runtime_error.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or missing input data: unreadable files, malformed headers, empty
// label classes, shape mismatches between volumes.
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : DataError {
    explicit IoError(const std::string& msg) : DataError(msg) {}
};

struct FormatError : DataError {
    explicit FormatError(const std::string& msg) : DataError(msg) {}
};

struct ShapeError : DataError {
    explicit ShapeError(const std::string& msg) : DataError(msg) {}
};

}  // namespace dla
