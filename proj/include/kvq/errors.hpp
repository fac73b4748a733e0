#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace kvq {

/// Invalid parameters: scheme fields, divisibility, generator settings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Violated operation precondition (empty tensor, out-of-range value).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Row or tensor dimensions do not match what the receiver expects.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation not allowed in the object's current state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A quantized container whose metadata is internally inconsistent.
class CorruptionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed KVT1 stream. Carries the byte offset where decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Filesystem failure (open, short write).
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace kvq
