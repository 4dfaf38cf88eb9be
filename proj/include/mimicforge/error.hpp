#pragma once

#include <stdexcept>
#include <string>

namespace mimicforge {

// Bad arguments: shape mismatch, empty masks, singular matrices.
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Object used before it was ready (uninitialized params, untrained model).
class InvalidState : public std::logic_error {
 public:
  explicit InvalidState(const std::string& what) : std::logic_error(what) {}
};

// Failures discovered while running (non-finite loss, I/O).
class RuntimeFailure : public std::runtime_error {
 public:
  explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mimicforge
