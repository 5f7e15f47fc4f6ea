#pragma once

#include <stdexcept>
#include <string>

namespace vqg {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible or invalid tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A forward op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file; the message names the file and line or record.
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value; the message names the offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace vqg
