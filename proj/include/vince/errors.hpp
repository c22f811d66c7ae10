#pragma once

#include <stdexcept>
#include <string>

namespace vince {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes that do not line up.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input outside an operation's mathematical domain, e.g. log of a non-positive value.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Inputs that make an operation undefined (zero-norm rows, too few rows, a single class...).
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// A caller-side contract that was not met (e.g. rows that should be unit-norm).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf appeared in a forward or backward pass.
class NumericError : public Error {
public:
    using Error::Error;
};

class CapacityError : public Error {
public:
    using Error::Error;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class RangeError : public Error {
public:
    using Error::Error;
};

/// Corrupt or truncated file.
class FormatError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace vince
