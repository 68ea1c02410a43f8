#pragma once

#include <stdexcept>
#include <string>

namespace atq {

// Error families, one per CLI exit code: validation = 2, numerical = 3,
// I/O and format = 4.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Malformed container header or field.
class FormatError : public IoError {
public:
    using IoError::IoError;
};

// Structurally valid header but inconsistent payload.
class CorruptionError : public FormatError {
public:
    using FormatError::FormatError;
};

} // namespace atq
