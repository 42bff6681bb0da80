#pragma once

#include <stdexcept>
#include <string>

namespace edis {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad arguments, shapes, configs or input files. The CLI maps this to exit code 1.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed file content; carries the 1-based line (0 when not line oriented).
class FormatError : public ValidationError {
public:
    FormatError(const std::string& what, std::size_t line = 0)
        : ValidationError(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite values or diverging computations at run time. Exit code 2.
class NumericError : public Error {
public:
    using Error::Error;
};

namespace detail {

[[noreturn]] inline void fail_validation(const std::string& msg) { throw ValidationError(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail_validation(msg);
}

}  // namespace detail
}  // namespace edis
