#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nluqa {

// Missing or unreadable input file; the message names the file.
class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data that parsed but violates an invariant (unknown class, bad span, ...).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied arguments outside an operation's precondition.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unknown model/encoder id, bad config file, missing worker.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class GenerationError : public std::runtime_error {
 public:
  GenerationError(std::size_t index, const std::string& what)
      : std::runtime_error("generation failed at input " + std::to_string(index) + ": " + what),
        index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

}  // namespace nluqa
