#pragma once

#include <stdexcept>
#include <string>

namespace loadcast {

// Error categories map onto the CLI exit codes.
enum class ErrorKind { Validation = 2, Numerical = 3, Io = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& msg) : Error(ErrorKind::Validation, msg) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& msg) : Error(ErrorKind::Numerical, msg) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(ErrorKind::Io, msg) {}
};

}  // namespace loadcast
