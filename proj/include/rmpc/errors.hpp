#pragma once

#include <stdexcept>
#include <string>

namespace rmpc {

/// Malformed or inconsistent problem data. The message names the offending
/// field using the problem-file key path (e.g. "cost.Q").
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A factorization failed or produced non-finite values, usually because the
/// iterate lost strict interiority.
class NumericalBreakdown : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rmpc
