#pragma once

#include <stdexcept>
#include <string>

namespace lgran {

// Error classes map one-to-one onto CLI exit codes (see tools/lgran.cpp).
enum class ErrorKind {
  kGeneric = 1,
  kUsage = 2,
  kIo = 3,
  kSchema = 4,
  kIncompatible = 5,
  kNumeric = 6,
  kGradCheck = 7,
  kGeneration = 8,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kGeneric, "shape mismatch: " + what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

class TapeError : public Error {
 public:
  explicit TapeError(const std::string& what) : Error(ErrorKind::kGeneric, what) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(ErrorKind::kSchema, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class IncompatibleError : public Error {
 public:
  explicit IncompatibleError(const std::string& what) : Error(ErrorKind::kIncompatible, what) {}
};

class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& what) : Error(ErrorKind::kGeneration, what) {}
};

}  // namespace lgran
