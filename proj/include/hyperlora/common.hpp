#pragma once

#include <stdexcept>
#include <string>

namespace hyperlora {

// Base class for all recoverable errors raised by the library. The CLI maps
// ValidationError to exit code 1 and everything else to 2.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// Non-finite value produced by an operation; the message names the node.
struct NumericsError : Error {
    explicit NumericsError(const std::string& msg) : Error("numerics error: " + msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

// Bad user input: unknown config key, out-of-vocabulary token, invalid flag.
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error("validation error: " + msg) {}
};

}  // namespace hyperlora
