#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mpt {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes that do not conform (matmul inner dims, conv channels, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Out-of-domain scalar parameters (t <= 0, P outside [0,100), bad stride, ...).
class ParameterError : public Error {
 public:
  using Error::Error;
};

// API misuse: backward twice, backward without a forward, etc.
class ContractError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf observed in activations.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, int layer)
      : Error(what + " (layer " + std::to_string(layer) + ")"), layer_(layer) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

// Malformed on-disk data. offset is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Missing or unreadable files.
class IoError : public Error {
 public:
  using Error::Error;
};

// Schema violations in run configuration documents.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Violated hypotheses of the existence constructions (width below the bound,
// target outside the admissible box). Distinct from a probabilistic failure.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Packed network driven with activations that do not match its mode.
class ModeError : public Error {
 public:
  using Error::Error;
};

}  // namespace mpt
