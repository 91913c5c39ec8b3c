#pragma once

#include <stdexcept>
#include <string>

namespace qualpipe {

// Base for all library errors. The CLI maps each subclass to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or missing user input: files, config values, annotation data.
class InputError : public Error {
 public:
  using Error::Error;
};

// Pipeline state problems, e.g. a stage invoked before its predecessor.
class StateError : public Error {
 public:
  using Error::Error;
};

// A precondition of a pure operation was violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

}  // namespace qualpipe
