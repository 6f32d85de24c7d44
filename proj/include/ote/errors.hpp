#pragma once

#include <stdexcept>
#include <string>

namespace ote {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// Image file I/O.
class FileNotFound : public Error {
 public:
  using Error::Error;
};
class UnsupportedFormat : public Error {
 public:
  using Error::Error;
};
class CorruptData : public Error {
 public:
  using Error::Error;
};
class WriteFailure : public Error {
 public:
  using Error::Error;
};

/// Raised when a critic kink (leaky activation exactly at zero) receives a
/// nonzero upstream gradient, so the input gradient is not uniquely defined.
class NotDifferentiable : public Error {
 public:
  using Error::Error;
};

class FingerprintMismatch : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  ManifestError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class UnmatchedGrade : public Error {
 public:
  explicit UnmatchedGrade(int grade)
      : Error("no high-quality record with DR grade " + std::to_string(grade)), grade_(grade) {}
  int grade() const noexcept { return grade_; }

 private:
  int grade_;
};

class NonFiniteLoss : public Error {
 public:
  using Error::Error;
};

}  // namespace ote
