#ifndef SEMSHIFT_ERROR_HPP
#define SEMSHIFT_ERROR_HPP

#include <stdexcept>
#include <string>

namespace semshift {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Unrecognized magic, version, or structural layout of a binary file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File size disagrees with the header-declared payload size.
class TruncationError : public Error {
 public:
  using Error::Error;
};

/// Invalid data content: non-finite values, out-of-range scores,
/// count mismatches, dangling references, bad selections.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure, e.g. a covariance that stays singular after the
/// full jitter escalation schedule.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Transport or scoring-service failure (HTTP errors, auth, protocol
/// violations in a response body).
class NetworkError : public Error {
 public:
  using Error::Error;
};

}  // namespace semshift

#endif  // SEMSHIFT_ERROR_HPP
