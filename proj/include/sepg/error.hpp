#pragma once

#include <stdexcept>
#include <string>

namespace sepg {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/axis mismatch between operands. Messages name the offending axis.
class DimensionError : public Error {
public:
    explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

// Invalid numeric parameter (temperature, top-k count, blend factor, ...).
class ParameterError : public Error {
public:
    explicit ParameterError(const std::string& msg) : Error("parameter error: " + msg) {}
};

// Invalid or inconsistent configuration (unknown mode, width mismatch, ...).
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("configuration error: " + msg) {}
};

// Corrupt or truncated serialized state.
class IntegrityError : public Error {
public:
    explicit IntegrityError(const std::string& msg) : Error("integrity error: " + msg) {}
};

// Unusable user input (missing file, empty dataset, bad image).
class InputError : public Error {
public:
    explicit InputError(const std::string& msg) : Error("input error: " + msg) {}
};

// Verification oracle could not run (non-finite objective, ...).
class OracleError : public Error {
public:
    explicit OracleError(const std::string& msg) : Error("oracle error: " + msg) {}
};

} // namespace sepg
