// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace gaitssl {

/// Base class for failures that map onto a process exit code.
class Error : public std::runtime_error {
public:
    Error(const std::string& kind, int exit_code, const std::string& message)
        : std::runtime_error(message), kind_(kind), exit_code_(exit_code) {}

    const std::string& kind() const noexcept { return kind_; }
    int exit_code() const noexcept { return exit_code_; }

private:
    std::string kind_;
    int exit_code_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& message) : Error("config", 2, message) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& message) : Error("data", 3, message) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& message) : Error("numerical", 4, message) {}
};

}  // namespace gaitssl
