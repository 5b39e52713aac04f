#pragma once

#include <stdexcept>
#include <string>

namespace colflow {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user input: malformed specs, expressions that do not parse or
// typecheck, invalid CLI arguments. The CLI maps these to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// On-disk data does not match the columnar file layout.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

// Data-dependent failure while evaluating an expression for one event.
class EvalError : public Error {
 public:
  using Error::Error;
};

}  // namespace colflow
