#pragma once

#include <stdexcept>
#include <string>

namespace tsdf {

// Base of every error the library throws. Callers that only care about
// "something failed" catch this; the subclasses let tests and the CLI tell
// failure kinds apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform to a kernel or model contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf appeared in a value, gradient or loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value (lr <= 0, T < 2, odd d_model, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke a precondition (non-scalar loss, class mixture, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Step or element index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Malformed input file: manifest, subject CSV, checkpoint.
class IngestionError : public Error {
 public:
  using Error::Error;
};

// Broken internal bookkeeping, e.g. a variable from a foreign graph.
class InternalError : public Error {
 public:
  using Error::Error;
};

}  // namespace tsdf
