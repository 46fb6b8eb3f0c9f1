#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace deblora {

/// Coarse failure category; the CLI maps it onto its exit code.
enum class ErrorKind { Validation, Io, Divergence, Internal };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Input violates a documented precondition. Carries the offending row when one applies.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what, std::optional<std::size_t> row = std::nullopt)
      : Error(ErrorKind::Validation, row ? what + " (row " + std::to_string(*row) + ")" : what),
        row_(row) {}
  std::optional<std::size_t> row() const noexcept { return row_; }

 private:
  std::optional<std::size_t> row_;
};

/// A file does not match its declared layout.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

/// min_size * K exceeds the number of samples.
class InfeasibleConstraintError : public Error {
 public:
  explicit InfeasibleConstraintError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

class InternalError : public Error {
 public:
  explicit InternalError(const std::string& what) : Error(ErrorKind::Internal, what) {}
};

/// Training produced a non-finite loss; usually the learning rate is too high.
class DivergenceError : public Error {
 public:
  explicit DivergenceError(const std::string& what) : Error(ErrorKind::Divergence, what) {}
};

/// Cosine distance requested for a zero-norm vector.
class DegenerateVectorError : public Error {
 public:
  explicit DegenerateVectorError(const std::string& what) : Error(ErrorKind::Validation, what) {}
};

}  // namespace deblora
