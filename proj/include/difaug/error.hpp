#pragma once

#include <stdexcept>
#include <string>

namespace difaug {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not fit an operation's contract.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad arguments or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input data (images, CSV logs, checkpoint headers).
class ParseError : public Error {
 public:
  using Error::Error;
};

// A NaN or Inf showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace difaug
