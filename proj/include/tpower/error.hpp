#pragma once

#include <stdexcept>
#include <string>

namespace tpower {

// Base for every error the toolkit raises. Anything not derived from
// ConfigError maps to exit code 1 at the CLI; ConfigError maps to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Norm exponent outside [1, inf].
class InvalidExponentError : public Error {
 public:
  using Error::Error;
};

// Operation has no closed form for the requested exponent (psi with q = inf).
class UnsupportedExponentError : public Error {
 public:
  using Error::Error;
};

class ZeroInputError : public Error {
 public:
  using Error::Error;
};

class ZeroIterateError : public Error {
 public:
  using Error::Error;
};

class InvalidKError : public Error {
 public:
  using Error::Error;
};

// Attack iterate collapsed to zero even after one reseeded restart.
class DegenerateIterateError : public Error {
 public:
  using Error::Error;
};

class EmptyDataError : public Error {
 public:
  using Error::Error;
};

// Metric denominator is empty (ASR with no clean-correct samples).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class InvalidWindowError : public Error {
 public:
  using Error::Error;
};

class ChannelMismatchError : public Error {
 public:
  using Error::Error;
};

// Unknown cut point or model identifier.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Operator too large to materialize.
class TooLargeError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (bad magic, truncated payload, wrong channel count).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Config/schema violations; the CLI exits with code 2 for these.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace tpower
