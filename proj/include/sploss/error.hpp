#pragma once

#include <stdexcept>
#include <string>

namespace sploss {

/// Base of every error the library throws.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not chain (batch width vs. input dim, gradient vs. parameter, ...).
struct DimensionError : Error {
  using Error::Error;
};

/// A value outside an operation's documented domain (c <= 0, eta < 0, empty list, ...).
struct InvalidArgument : Error {
  using Error::Error;
};

/// Malformed checkpoint, IDX, CSV or config input.
struct ParseError : Error {
  using Error::Error;
};

struct UnsupportedVersionError : ParseError {
  using ParseError::ParseError;
};

/// A forward cache used after the network it came from was modified or replaced.
struct StaleCacheError : Error {
  using Error::Error;
};

/// Raised by experiment configuration validation before any work starts.
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace sploss
