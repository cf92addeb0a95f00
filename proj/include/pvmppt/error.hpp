#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pvmppt {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid parameters, malformed configuration, violated preconditions.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Root solve of the diode equation did not converge.
class SolverError : public Error {
public:
    SolverError(const std::string& what, double residual)
        : Error(what + " (last residual " + std::to_string(residual) + ")"), residual_(residual) {}

    double residual() const noexcept { return residual_; }

private:
    double residual_;
};

/// Configuration text that failed to parse, with its location.
class ParseError : public ConfigError {
public:
    ParseError(const std::string& source, std::size_t line, const std::string& what)
        : ConfigError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A file could not be opened, read or written.
class FileError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    using Error::Error;
};

/// A plant state went non-finite during integration.
class InstabilityError : public Error {
public:
    InstabilityError(const std::string& state, double time)
        : Error("plant state '" + state + "' became non-finite at t=" + std::to_string(time) + " s"),
          state_(state), time_(time) {}

    const std::string& state() const noexcept { return state_; }
    double time() const noexcept { return time_; }

private:
    std::string state_;
    double time_;
};

/// Training loss became non-finite.
class DivergenceError : public Error {
public:
    using Error::Error;
};

} // namespace pvmppt
