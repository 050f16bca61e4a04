#pragma once

#include <cstdio>
#include <functional>
#include <stdexcept>
#include <string>

namespace polypseg {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor shapes do not line up; the message names the offending axis.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Hyperparameters are inconsistent (non-integral output size, bad stride, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input values are outside their contract (labels, mask values, intensities).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Degenerate camera or light geometry.
class GeometryError : public Error {
public:
    using Error::Error;
};

/// Missing or undecodable files, unpaired dataset records.
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite loss or gradients during optimization.
class DivergenceError : public Error {
public:
    using Error::Error;
};

using WarnHandler = std::function<void(const std::string&)>;

/// Process-wide sink for warning-level diagnostics. Tests may swap it out;
/// the default prints to stderr.
inline WarnHandler& warn_handler() {
    static WarnHandler handler = [](const std::string& msg) {
        std::fprintf(stderr, "warning: %s\n", msg.c_str());
    };
    return handler;
}

inline void warn(const std::string& msg) {
    if (warn_handler()) warn_handler()(msg);
}

}  // namespace polypseg
