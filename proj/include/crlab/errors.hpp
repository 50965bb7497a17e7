#pragma once

#include <stdexcept>
#include <string>

namespace crlab {

// Error taxonomy. Each failure mode named by a module contract gets its own
// type so callers and tests can discriminate without string matching.

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct SequenceLengthError : std::runtime_error {
    explicit SequenceLengthError(const std::string& msg)
        : std::runtime_error("sequence length error: " + msg) {}
};

struct MalformedTokenError : std::runtime_error {
    explicit MalformedTokenError(const std::string& msg)
        : std::runtime_error("malformed token: " + msg) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error("integrity error: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("i/o error: " + msg) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg)
        : std::runtime_error("validation error: " + msg) {}
};

struct EmptyCorpusError : std::runtime_error {
    explicit EmptyCorpusError(const std::string& msg)
        : std::runtime_error("empty corpus: " + msg) {}
};

struct DegenerateBatchError : std::runtime_error {
    explicit DegenerateBatchError(const std::string& msg)
        : std::runtime_error("degenerate batch: " + msg) {}
};

struct NumericFaultError : std::runtime_error {
    explicit NumericFaultError(const std::string& msg)
        : std::runtime_error("numeric fault: " + msg) {}
};

struct DependencyError : std::runtime_error {
    explicit DependencyError(const std::string& msg)
        : std::runtime_error("dependency error: " + msg) {}
};

struct PipelineError : std::runtime_error {
    explicit PipelineError(const std::string& msg) : std::runtime_error("pipeline error: " + msg) {}
};

struct ComparisonError : std::runtime_error {
    explicit ComparisonError(const std::string& msg)
        : std::runtime_error("comparison error: " + msg) {}
};

}  // namespace crlab
