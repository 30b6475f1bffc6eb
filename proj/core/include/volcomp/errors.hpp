#pragma once

#include <stdexcept>
#include <string>

namespace volcomp {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed something that violates a documented precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent file contents, missing files, manifest mismatches.
class FormatError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf loss or state during training or sampling.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace volcomp
