#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdp {

// Base for every failure raised by the library. The CLI maps ConfigError and
// ValidationError subclasses to exit code 1 and everything else to 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// vocab
class UnknownToken : public ValidationError {
 public:
  explicit UnknownToken(std::string unit)
      : ValidationError("unknown token '" + unit + "'"), unit_(std::move(unit)) {}
  const std::string& unit() const noexcept { return unit_; }

 private:
  std::string unit_;
};

class InvalidId : public ValidationError {
 public:
  InvalidId(std::size_t id, std::size_t vocab_size)
      : ValidationError("token id " + std::to_string(id) + " out of range for vocabulary of size " +
                        std::to_string(vocab_size)) {}
};

// rules
class UndefinedForProblem : public Error {
 public:
  using Error::Error;
};

// consistency
class EmptyProbeDomain : public ValidationError {
 public:
  EmptyProbeDomain() : ValidationError("consistency relation has an empty probe domain") {}
};

class NoConsistentTutorSet : public Error {
 public:
  using Error::Error;
};

class AmbiguousTutorSet : public Error {
 public:
  using Error::Error;
};

// corpus
class InvalidSpec : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class InfeasibleSplit : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& reason)
      : ValidationError("line " + std::to_string(line) + ": " + reason), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// model
class InvalidConfig : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class SequenceTooLong : public Error {
 public:
  SequenceTooLong(std::size_t length, std::size_t context_len)
      : Error("sequence of length " + std::to_string(length) + " exceeds context length " +
              std::to_string(context_len)) {}
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// training
class AlreadyAugmented : public Error {
 public:
  AlreadyAugmented() : Error("sequence already contains a hallucination marker") {}
};

class NonFiniteLoss : public Error {
 public:
  explicit NonFiniteLoss(std::size_t step)
      : Error("non-finite loss at optimizer step " + std::to_string(step)), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// eval. Both are refusals of bad inputs, so the CLI reports them as validation errors.
class ConfigMismatch : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ProbeContamination : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// cli
class ConfigError : public ValidationError {
 public:
  ConfigError(std::string key_path, const std::string& reason)
      : ValidationError(key_path + ": " + reason), key_path_(std::move(key_path)) {}
  const std::string& key_path() const noexcept { return key_path_; }

 private:
  std::string key_path_;
};

}  // namespace sdp
