#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace minv {

// Base class for all library errors.  Subclasses exist so callers (and the
// CLI exit-code mapping) can tell configuration problems, numeric failures
// and missing artifacts apart without string matching.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape/dimension mismatch, bad axis, slice out of range, ...
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Non-finite values, divergence, failed convergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Work-size ceilings (e.g. dense jacobian entry budget).
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Rank-deficient tangent bases, degenerate decoders, zero gradients.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// Malformed files.  byte_offset is the position of the problem when known
// (offset of the first missing byte for truncated payloads), or -1.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, long long byte_offset = -1)
      : Error(byte_offset >= 0
                  ? what + " (byte offset " + std::to_string(byte_offset) + ")"
                  : what),
        byte_offset_(byte_offset) {}
  long long byte_offset() const { return byte_offset_; }

 private:
  long long byte_offset_;
};

// Invalid or inconsistent configuration (CLI exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A required artifact (checkpoint, dataset, cache) is absent (exit code 4).
class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite; carries the epoch where it happened.
class TrainingDivergedError : public NumericError {
 public:
  TrainingDivergedError(const std::string& what, std::size_t epoch)
      : NumericError(what + " (epoch " + std::to_string(epoch) + ")"),
        epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace minv
