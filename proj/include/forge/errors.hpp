#pragma once

#include <stdexcept>
#include <string>

namespace forge {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed input data (records, task files, templates).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Corrupt, truncated or mismatched checkpoint/archive.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

// Operation illegal in the object's current state (e.g. double merge).
class StateError : public Error {
 public:
  using Error::Error;
};

// Input longer than the model context.
class ContextOverflowError : public Error {
 public:
  using Error::Error;
};

// Value outside its permitted range (e.g. token id >= vocabulary).
class RangeError : public Error {
 public:
  using Error::Error;
};

// Numerically degenerate input (e.g. cross-entropy with every position masked).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

}  // namespace forge
