#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mrrag {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid input or configuration supplied by the caller (CLI exit code 2).
class ValidationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Failure talking to a model server. `retryable` marks transport-level
/// failures (connection errors, 5xx, 429) that a caller may try again.
class BackendError : public Error {
public:
    BackendError(std::string message, bool retryable)
        : Error(std::move(message)), retryable_(retryable) {}

    bool retryable() const noexcept { return retryable_; }

private:
    bool retryable_;
};

/// A structured reply could not be parsed even after the reprompt.
class MalformedOutputError : public Error {
public:
    using Error::Error;
};

class UnknownReleaseError : public Error {
public:
    explicit UnknownReleaseError(std::string release)
        : Error("release " + release + " is not available"), release_(std::move(release)) {}

    const std::string& release() const noexcept { return release_; }

private:
    std::string release_;
};

/// A pipeline step failed fatally; carries the step tag for the caller.
class StepError : public Error {
public:
    StepError(std::string step, const std::string& message)
        : Error(message), step_(std::move(step)) {}

    const std::string& step() const noexcept { return step_; }

private:
    std::string step_;
};

} // namespace mrrag
