#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace qad {

enum class ErrorKind {
  kValidation,  // bad input values, contract violations
  kParse,       // malformed file content
  kIo,          // unreadable / unwritable paths
  kScorer,      // external scorer timeout, protocol error, crash
};

// Base of every error thrown by the library. The CLI maps `kind()` to an
// exit code (2 validation/parse, 3 scorer, 4 I/O).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what)
      : Error(ErrorKind::kValidation, what) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what)
      : Error(ErrorKind::kParse, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class ScorerError : public Error {
 public:
  enum class Reason { kTimeout, kProtocol, kCrash, kLaunch };

  static constexpr std::size_t kNoRow = static_cast<std::size_t>(-1);

  ScorerError(Reason reason, const std::string& what, std::size_t row = kNoRow)
      : Error(ErrorKind::kScorer, what), reason_(reason), row_(row) {}

  Reason reason() const noexcept { return reason_; }
  // 0-based index of the row being answered when the failure happened.
  std::size_t row() const noexcept { return row_; }

 private:
  Reason reason_;
  std::size_t row_;
};

}  // namespace qad
