#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace odenet {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the domain of a function, e.g. t outside [0, T].
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Incompatible tensor shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent configuration (mismatched final times, invalid sizes, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerically singular system in a basis transformation.
class ConditioningError : public Error {
 public:
  using Error::Error;
};

/// A basis function receives no samples in a point-cloud projection.
class CoverageError : public Error {
 public:
  CoverageError(std::size_t basis_index, const std::string& what)
      : Error(what), basis_index_(basis_index) {}

  /// Zero-based index of the first basis function that is not covered.
  std::size_t basis_index() const noexcept { return basis_index_; }

 private:
  std::size_t basis_index_;
};

/// Non-finite value produced while integrating.
class DivergenceError : public Error {
 public:
  DivergenceError(double t, std::size_t stage, const std::string& what)
      : Error(what), t_(t), stage_(stage) {}

  double time() const noexcept { return t_; }
  std::size_t stage() const noexcept { return stage_; }

 private:
  double t_;
  std::size_t stage_;
};

/// Violated API contract (e.g. differentiating a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Checkpoint and file-format errors.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class SpecError : public FormatError {
 public:
  SpecError(std::string field, const std::string& what)
      : FormatError(what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace odenet
