#pragma once

#include <stdexcept>
#include <string>

namespace stt {

// Error categories surfaced by the library. The CLI maps each kind to a
// distinct exit code and a one-line `error[kind]: message` report.
enum class ErrorKind { usage, format, numerical, io };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error(ErrorKind::format, what) {}
};

struct NumericalError : Error {
    explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

inline const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage: return "usage";
        case ErrorKind::format: return "format";
        case ErrorKind::numerical: return "numerical";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

} // namespace stt
