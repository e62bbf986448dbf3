#pragma once

#include <stdexcept>
#include <string>

namespace ircnn {

/// Base of every error the library raises. `category()` is the short,
/// machine-parseable tag the CLI prints on failure.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& what)
        : std::runtime_error(what), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

/// Inconsistent shapes, specs or model/run configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error("config", what) {}
};

/// Bad sample data, e.g. a label outside the class range.
struct DataError : Error {
    explicit DataError(const std::string& what) : Error("data", what) {}
};

/// Malformed file contents (IDX, CIFAR binary, checkpoint).
struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error("format", what) {}
};

/// NaN or Inf produced by a kernel.
struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error("numeric", what) {}
};

struct TrainingError : Error {
    explicit TrainingError(const std::string& what) : Error("training", what) {}
};

struct InitError : Error {
    explicit InitError(const std::string& what) : Error("init", what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error("io", what) {}
};

/// Broken internal contract (stale cache, wrong call order).
struct InternalError : Error {
    explicit InternalError(const std::string& what) : Error("internal", what) {}
};

} // namespace ircnn
