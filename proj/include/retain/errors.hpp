#pragma once

#include <stdexcept>
#include <string>

namespace retain {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or declared dimensions do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared, or training diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A file or text input could not be parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A caller-side precondition was violated (empty inputs, bad config, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain where a quantity is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Two artifacts that must describe the same computation disagree.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace retain
