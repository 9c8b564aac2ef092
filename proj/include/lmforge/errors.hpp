#pragma once

#include <stdexcept>
#include <string>

namespace lmforge {

// Error taxonomy mirrored by the CLI exit codes:
// config=2, data=3, service=4.
enum class ErrorKind { config, data, service };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class ServiceError : public Error {
public:
    explicit ServiceError(const std::string& what) : Error(ErrorKind::service, what) {}
};

}  // namespace lmforge
