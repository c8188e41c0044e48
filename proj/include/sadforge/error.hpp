#pragma once

#include <stdexcept>
#include <string>

namespace sadforge {

/// Base of every exception thrown by the library. Each module derives one
/// error type carrying a module-specific `kind` enum.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A configuration file or flag is missing, malformed, or inconsistent.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace sadforge
