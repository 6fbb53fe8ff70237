// Error types shared across the library. Everything derives from
// metasaug::Error so callers can catch one base; the CLI maps
// ConfigError/ParseError to exit code 2 and the rest to exit code 1.
#pragma once

#include <stdexcept>
#include <string>

namespace metasaug {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Shape/symmetry violations in linear algebra and model plumbing.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(what) {}
};

// Matrix decomposition failed (e.g. Cholesky after jitter retries).
class DecompositionError : public Error {
 public:
  explicit DecompositionError(const std::string& what) : Error(what) {}
};

// Dataset cannot satisfy a request (long-tail counts, validation split).
class InsufficientDataError : public Error {
 public:
  explicit InsufficientDataError(const std::string& what) : Error(what) {}
};

// Malformed input file; message carries the offending line when known.
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error(what) {}
};

// Invalid configuration value or combination.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

// Operation not valid for the current mode (e.g. gradient step on an
// estimated covariance bank).
class ModeError : public Error {
 public:
  explicit ModeError(const std::string& what) : Error(what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

}  // namespace metasaug
