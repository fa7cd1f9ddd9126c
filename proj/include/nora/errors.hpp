#pragma once

#include <stdexcept>
#include <string>

namespace nora {

/// Base class for every error raised by the library. The CLI maps the
/// subclasses onto its exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dimension or plan mismatch between arguments.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid parameter values (out of range, inconsistent, unsatisfiable).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// File could not be opened, read, or written.
class IoError : public Error {
public:
    using Error::Error;
};

/// File was readable but its content is not a valid container.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

/// Divergence, non-finite values, or a failed decomposition.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace nora
