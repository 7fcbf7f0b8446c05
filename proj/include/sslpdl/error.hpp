#pragma once

#include <stdexcept>
#include <string>

namespace sslpdl {

// Error taxonomy. The CLI maps each family onto an exit code:
// ConfigError -> 2, DataError (and subclasses) -> 3, NumericError -> 4.

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Bad argument to a library call (shape mismatch, out-of-domain value).
class ArgumentError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

class DomainError : public ArgumentError {
public:
    using ArgumentError::ArgumentError;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public DataError {
public:
    IoError(const std::string& what, const std::string& path)
        : DataError(what + ": " + path), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

class FormatError : public DataError {
public:
    using DataError::DataError;
};

class CorruptionError : public DataError {
public:
    using DataError::DataError;
};

class ValidationError : public DataError {
public:
    using DataError::DataError;
};

class SamplingError : public DataError {
public:
    SamplingError(const std::string& what, double achieved = -1.0)
        : DataError(what), achieved_(achieved) {}
    // Achieved no-rain pixel fraction when the target was unreachable, else -1.
    double achieved() const noexcept { return achieved_; }

private:
    double achieved_;
};

class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

class NumericError : public std::runtime_error {
public:
    NumericError(const std::string& what, long long step = -1)
        : std::runtime_error(step >= 0 ? what + " (step " + std::to_string(step) + ")" : what),
          step_(step) {}
    long long step() const noexcept { return step_; }

private:
    long long step_;
};

} // namespace sslpdl
