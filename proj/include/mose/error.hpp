#pragma once

#include <stdexcept>
#include <string>

namespace mose {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes disagree. The message names the offending axis.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (k > n, non-divisible image size, unknown key, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data violates a documented precondition (non one-hot labels, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Malformed file (checkpoint, PGM, manifest).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Procedural generator exhausted its retry budget.
class GenerationError : public Error {
public:
    using Error::Error;
};

}  // namespace mose
