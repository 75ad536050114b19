#pragma once

#include <stdexcept>
#include <string>

namespace kfusion {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input: bad file contents, non-finite entries, nonpositive weights,
/// inconsistent dimensions, invalid tolerances.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A theorem or operation was invoked on data that violates its hypotheses.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// The frame operator is not injective on R(K); no restricted inverse exists.
class NotKFrameError : public PreconditionError {
 public:
  using PreconditionError::PreconditionError;
};

/// Internal inconsistency between routes that must agree (e.g. the three
/// Douglas criteria). Signals a tolerance or rank-decision problem.
class DiagnosticError : public Error {
 public:
  using Error::Error;
};

/// Bad command-line usage or a request that cannot be served with the data given.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace kfusion
