#pragma once

#include <stdexcept>
#include <string>

namespace procst {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};
struct ArgError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct IntegrityError : Error {
  using Error::Error;
};
struct VersionError : Error {
  using Error::Error;
};

/// Raised by the trainer when a loss goes non-finite. Carries the last
/// step index at which every loss term was still finite.
struct DivergenceError : Error {
  long last_finite_step;
  DivergenceError(const std::string& msg, long last_finite)
      : Error(msg), last_finite_step(last_finite) {}
};

}  // namespace procst
