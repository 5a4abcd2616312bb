#pragma once

#include <stdexcept>
#include <string>

namespace mnmix {

// Parameter outside the domain of a function or distribution.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A model quantity became non-finite (overflow, degenerate state).
class InvalidStateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data or configuration. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sampler diagnosed a stuck block (e.g. zero acceptance in every chain).
class SamplerError : public std::runtime_error {
 public:
  SamplerError(std::string block, const std::string& what)
      : std::runtime_error(what), block_(std::move(block)) {}
  const std::string& block() const noexcept { return block_; }

 private:
  std::string block_;
};

}  // namespace mnmix
