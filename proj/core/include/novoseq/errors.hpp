#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace novoseq {

// Base for everything the library throws on bad input or bad state.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf where a finite value is required, fully masked attention rows, etc.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad user data: unknown tokens, unknown spectrum ids, vocabulary mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { Io, BadMagic, VersionMismatch, Truncated, UnknownPartition, BadConfig };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace novoseq
