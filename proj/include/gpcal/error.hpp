#pragma once

#include <stdexcept>
#include <string>

namespace gpcal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Raised when a covariance cannot be factorized even after jitter escalation.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite() : Error("covariance not PD") {}
};

}  // namespace gpcal
