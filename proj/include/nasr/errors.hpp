#pragma once

#include <stdexcept>
#include <string>

namespace nasr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad file contents, violated preconditions, unknown keys.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a computation, or a training run that diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Base for failures of a route search.
class SearchError : public Error {
 public:
  using Error::Error;
};

class SearchBudgetError : public SearchError {
 public:
  using SearchError::SearchError;
};

class UnreachableError : public SearchError {
 public:
  using SearchError::SearchError;
};

/// Transition distribution requested at a location without successors.
class DeadEndError : public SearchError {
 public:
  using SearchError::SearchError;
};

}  // namespace nasr
