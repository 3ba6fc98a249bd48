#pragma once

#include <stdexcept>
#include <string>

namespace factguard {

// Error taxonomy used across the library. The CLI maps ConfigError to exit
// code 2 and everything else to exit code 1.

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape error: " + msg) {}
};

struct ArgumentError : std::runtime_error {
    explicit ArgumentError(const std::string& msg) : std::runtime_error("argument error: " + msg) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric error: " + msg) {}
};

struct LookupError : std::runtime_error {
    explicit LookupError(const std::string& msg) : std::runtime_error("lookup error: " + msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error("parse error: " + msg) {}
    ParseError(const std::string& msg, std::size_t line)
        : std::runtime_error("parse error at line " + std::to_string(line) + ": " + msg) {}
};

struct PipelineError : std::runtime_error {
    explicit PipelineError(const std::string& msg) : std::runtime_error("pipeline error: " + msg) {}
};

} // namespace factguard
