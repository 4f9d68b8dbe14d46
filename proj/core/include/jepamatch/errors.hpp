#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace jepamatch {

// Base for every error raised by the library. Callers that only care about
// "something went wrong" catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
class DimensionError : public Error {
public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (log of <= 0, ...).
class DomainError : public Error {
public:
  using Error::Error;
};

// Caller broke a documented precondition.
class ContractError : public Error {
public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
public:
  using Error::Error;
};

// Invalid run/dataset configuration. `field` is a dotted path such as
// "dataset.gamma".
class ConfigError : public Error {
public:
  ConfigError(std::string field, const std::string &what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string &field() const noexcept { return field_; }

private:
  std::string field_;
};

// Malformed binary file. `offset` is the byte position where decoding failed.
class FormatError : public Error {
public:
  FormatError(std::uint64_t offset, const std::string &what)
      : Error("at byte " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

private:
  std::uint64_t offset_;
};

// Filesystem failure (missing file, unwritable directory).
class IoError : public Error {
public:
  using Error::Error;
};

} // namespace jepamatch
