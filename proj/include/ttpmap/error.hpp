#pragma once

#include <stdexcept>
#include <string>

namespace ttpmap {

// Base of every error the library throws. Callers that only need a message
// can catch this; stage-aware callers catch the concrete types.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Gateway failures. TransientError is the only kind the retry loop retries.
class GatewayError : public Error {
 public:
  using Error::Error;
};

class TransientError : public GatewayError {
 public:
  using GatewayError::GatewayError;
};

class TransportError : public GatewayError {
 public:
  TransportError(const std::string& what, int attempts)
      : GatewayError(what), attempts_(attempts) {}
  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

class ReplayMissError : public GatewayError {
 public:
  explicit ReplayMissError(std::string fingerprint)
      : GatewayError("replay miss: no recorded exchange for fingerprint " + fingerprint),
        fingerprint_(std::move(fingerprint)) {}
  const std::string& fingerprint() const noexcept { return fingerprint_; }

 private:
  std::string fingerprint_;
};

}  // namespace ttpmap
