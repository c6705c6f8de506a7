#pragma once

#include <stdexcept>
#include <string>

namespace ndp {

// Argument dimensions disagree with the declared shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside the mathematical domain of the operation
// (non-positive sigma, times before t0, empty context, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Object used in a state that does not allow the call
// (e.g. running backward twice over the same tape).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values produced during integration, loss evaluation or an
// optimizer step.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ndp
