#pragma once

#include <stdexcept>
#include <string>

namespace difuse {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments: shapes, ranges, unknown names. Raised before any side effect.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A requested resource (checkpoint, mask file, image) does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Locator endpoint unreachable, timed out, or answered with an unexpected status.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Malformed payload: corrupt checkpoint, non-binary mask, undecodable image.
class FormatError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

}  // namespace difuse
