#pragma once

#include <stdexcept>
#include <string>

namespace advleaf {

/// Base class for all toolkit errors. The category string is stable and
/// machine-parseable; the CLI maps categories to exit codes.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

/// Tensor/layer dimension mismatch.
struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("shape", m) {}
};

/// Invalid hyperparameter or configuration value.
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config", m) {}
};

/// Index (label, sample id, class) out of range.
struct IndexError : Error {
    explicit IndexError(const std::string& m) : Error("index", m) {}
};

/// Autodiff graph misuse (e.g. backward from a tensor not on the tape).
struct GraphError : Error {
    explicit GraphError(const std::string& m) : Error("graph", m) {}
};

/// Non-finite values where finite ones are required.
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric", m) {}
};

/// Dataset-level problems (empty splits, inconsistent samples, ...).
struct DataError : Error {
    explicit DataError(const std::string& m) : Error("data", m) {}
};

/// Malformed or corrupted file contents.
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("format", m) {}
};

/// Filesystem failures (unreadable/unwritable paths).
struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io", m) {}
};

} // namespace advleaf
