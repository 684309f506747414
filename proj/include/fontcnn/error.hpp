#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fontcnn {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. `offset` is the byte position where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Bad or inconsistent data handed to an operation (empty sets, size mismatch, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

// Layer/tensor shape incompatibility, raised while building a model.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite values appeared during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Invalid run configuration. `key` names the offending entry when known.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::string key = {}) : Error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fontcnn
