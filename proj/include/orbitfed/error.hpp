#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace orbitfed {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an argument does not hold.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// The requested resource configuration cannot satisfy its constraints.
class Infeasible : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Input file is malformed or unreadable.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Scenario failed validation; carries every problem found, not just the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}

  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& items) {
    std::string out = "invalid scenario";
    for (const auto& item : items) {
      out += "; ";
      out += item;
    }
    return out;
  }

  std::vector<std::string> problems_;
};

}  // namespace orbitfed
