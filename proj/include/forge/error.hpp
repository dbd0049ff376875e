#pragma once

#include <stdexcept>
#include <string>

namespace forge {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or invariant violated by caller-supplied values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed file using a variant we do not read (bit depth, channels).
class UnsupportedFormatError : public FormatError {
 public:
  using FormatError::FormatError;
};

// Filesystem failures (unreadable, unwritable).
class IoError : public Error {
 public:
  using Error::Error;
};

// Input too short for the requested analysis.
class TooShortError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Numerical training failure (non-finite loss).
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace forge
