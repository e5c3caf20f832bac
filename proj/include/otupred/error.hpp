#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>

namespace otupred {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (bad CSV, shape mismatch, empty sample).
class DataError : public Error {
public:
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Invalid caller-supplied options or arguments.
class UsageError : public Error {
public:
    explicit UsageError(const std::string& msg) : Error(msg) {}
};

// Numerical failure (non-finite value, singular system, non-convergence).
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Requested model exceeds a hard resource bound.
class CapacityError : public Error {
public:
    explicit CapacityError(const std::string& msg) : Error(msg) {}
};

// Non-fatal diagnostics are routed through a process-wide handler so library
// code never writes to streams directly and tests can capture warnings.
using WarnHandler = std::function<void(const std::string&)>;

inline WarnHandler& warn_handler() {
    static WarnHandler handler = [](const std::string& msg) {
        std::cerr << "warning: " << msg << '\n';
    };
    return handler;
}

inline void set_warn_handler(WarnHandler h) { warn_handler() = std::move(h); }

inline void warn(const std::string& msg) {
    if (warn_handler()) warn_handler()(msg);
}

}  // namespace otupred
