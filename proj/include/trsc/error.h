#pragma once

#include <stdexcept>
#include <string>

namespace trsc {

// Base for all library errors. CLI maps subclasses to exit codes:
// IoError -> 2, everything else -> 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct ValueError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ParseError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace trsc
