#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ensi {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidParams : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Raised when an operation needs more multiplicative levels than the
/// operand has left. `tag` is the counter tag of the offending ciphertext
/// (or the stage label added by a kernel on the way up).
class DepthExceeded : public Error {
 public:
  DepthExceeded(std::string tag, int required, int available)
      : Error("depth exceeded" + (tag.empty() ? std::string() : " in '" + tag + "'") +
              ": need " + std::to_string(required) + " level(s), have " +
              std::to_string(available)),
        tag_(std::move(tag)),
        required_(required),
        available_(available) {}

  const std::string& tag() const noexcept { return tag_; }
  int required() const noexcept { return required_; }
  int available() const noexcept { return available_; }

 private:
  std::string tag_;
  int required_;
  int available_;
};

class KeyMismatch : public Error {
 public:
  using Error::Error;
};

class MissingKey : public Error {
 public:
  using Error::Error;
};

class RefreshDisabled : public Error {
 public:
  using Error::Error;
};

/// Malformed serialized data; `offset` is the byte position where parsing
/// failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

class ProtocolError : public Error {
 public:
  ProtocolError(std::uint16_t code, const std::string& what) : Error(what), code_(code) {}
  std::uint16_t code() const noexcept { return code_; }

 private:
  std::uint16_t code_;
};

}  // namespace ensi
