#pragma once

#include <stdexcept>
#include <string>

namespace emh {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid combination of options, bad design names, unsupported formats.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Benchmark, schema, or annotation file could not be ingested.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Model output that does not follow the requested structure.
/// Carries the raw text so callers can log or persist it.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string raw)
      : Error(what), raw_(std::move(raw)) {}

  const std::string& raw() const noexcept { return raw_; }

 private:
  std::string raw_;
};

class ExplanationParseError : public ParseError {
 public:
  using ParseError::ParseError;
};

/// Statistic that is undefined for the given input (zero variance,
/// too few observations, length mismatch).
class UndefinedStatisticError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Backend failures. Transient errors are retried, permanent ones are not.

class BackendError : public Error {
 public:
  using Error::Error;
  virtual bool transient() const noexcept { return false; }
};

class TransientBackendError : public BackendError {
 public:
  using BackendError::BackendError;
  bool transient() const noexcept override { return true; }
};

/// Connection refused, timeouts, HTTP 5xx.
class TransportError : public TransientBackendError {
 public:
  using TransientBackendError::TransientBackendError;
};

/// HTTP 429.
class RateLimitError : public TransientBackendError {
 public:
  using TransientBackendError::TransientBackendError;
};

/// HTTP 401/403 or a missing API key.
class AuthError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// Any other rejected request (4xx other than 429, malformed response,
/// scripted backend without a matching entry).
class PermanentBackendError : public BackendError {
 public:
  using BackendError::BackendError;
};

/// A line of the response cache could not be decoded.
class CacheCorruptionError : public Error {
 public:
  CacheCorruptionError(const std::string& what, std::size_t line)
      : Error(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace emh
