#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace depthpose {

/// Invalid argument, shape or configuration. Maps to CLI exit code 2.
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// File could not be opened, read or written. Maps to CLI exit code 3.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class FormatErrorKind { BadMagic, VersionMismatch, Truncated, Checksum, BadHeader };

inline const char *to_string(FormatErrorKind kind) {
  switch (kind) {
  case FormatErrorKind::BadMagic: return "bad magic";
  case FormatErrorKind::VersionMismatch: return "version mismatch";
  case FormatErrorKind::Truncated: return "truncated payload";
  case FormatErrorKind::Checksum: return "checksum failure";
  case FormatErrorKind::BadHeader: return "malformed header";
  }
  return "unknown";
}

/// Malformed container or model file. `sample_index` is set for checksum
/// failures that could be localised to one sample record.
class FormatError : public IoError {
public:
  FormatError(FormatErrorKind kind, const std::string &detail,
              std::optional<std::size_t> sample_index = std::nullopt)
      : IoError(std::string(to_string(kind)) + ": " + detail), kind_(kind),
        sample_index_(sample_index) {}

  FormatErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> sample_index() const noexcept { return sample_index_; }

private:
  FormatErrorKind kind_;
  std::optional<std::size_t> sample_index_;
};

namespace detail {
inline void require(bool cond, const std::string &msg) {
  if (!cond)
    throw ValidationError(msg);
}
} // namespace detail

} // namespace depthpose
