#pragma once

#include <stdexcept>
#include <string>

namespace latentcut {

/// Unreadable files, malformed documents, and model specifications that
/// violate their invariants.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Numerical failure inside the approximation engine.
class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace latentcut
