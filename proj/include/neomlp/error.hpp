#pragma once

#include <stdexcept>
#include <string>

namespace neomlp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or hyperparameter inconsistency.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A value outside the domain an operation accepts (non-finite coordinate...).
class InputDomainError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. backward() on an empty tape.
class UsageError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or inconsistent persisted data.
class CorruptionError : public IoError {
 public:
  using IoError::IoError;
};

/// A ν-set presented against a backbone it was not produced with.
class FingerprintMismatch : public Error {
 public:
  using Error::Error;
};

class IngestError : public IoError {
 public:
  using IoError::IoError;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// An invariant that callers cannot violate through the public API was broken.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace neomlp
