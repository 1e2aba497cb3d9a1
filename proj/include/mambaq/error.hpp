#pragma once

#include <stdexcept>
#include <string>

namespace mambaq {

// Every failure the library raises derives from Error so callers can catch one
// type at the boundary (the CLI maps these to exit codes).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimError : Error {
    explicit DimError(const std::string& msg) : Error("dimension error: " + msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct UnsupportedError : Error {
    explicit UnsupportedError(const std::string& msg) : Error("unsupported: " + msg) {}
};

struct CapacityError : Error {
    explicit CapacityError(const std::string& msg) : Error("capacity error: " + msg) {}
};

struct AccumOverflowError : Error {
    explicit AccumOverflowError(const std::string& msg) : Error("accumulator overflow: " + msg) {}
};

struct ScaleOverflowError : Error {
    explicit ScaleOverflowError(const std::string& msg) : Error("scale overflow: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

struct InfeasibleError : Error {
    explicit InfeasibleError(const std::string& msg) : Error("infeasible: " + msg) {}
};

inline void check(bool ok, const std::string& msg) {
    if (!ok) throw Error(msg);
}

}  // namespace mambaq
