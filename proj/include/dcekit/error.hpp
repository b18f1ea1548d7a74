#pragma once

#include <stdexcept>
#include <string>

namespace dcekit {

/// Input that violates a documented precondition or file invariant.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Failure while reading or writing files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A well-formed input for which no result exists (e.g. no vascular region).
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ValidationError(what);
}

}  // namespace detail
}  // namespace dcekit
