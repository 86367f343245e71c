#pragma once

#include <stdexcept>
#include <string>

namespace famguard {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (bad token id, empty concept, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Input data failed validation (malformed model spec, too few scores, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A word is not in a closed toy vocabulary.
class OovError : public Error {
 public:
  explicit OovError(std::string word)
      : Error("out-of-vocabulary word: \"" + word + "\""), word_(std::move(word)) {}
  const std::string& word() const noexcept { return word_; }

 private:
  std::string word_;
};

/// A remote service replied with a payload that does not match its protocol.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// A remote service could not be reached or answered with a non-2xx status.
/// Always retriable. status() is 0 when no HTTP response was received.
class TransportError : public Error {
 public:
  TransportError(const std::string& what, int status) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Bad command-line usage or configuration value.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace famguard
