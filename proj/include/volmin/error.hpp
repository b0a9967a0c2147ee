#pragma once

#include <stdexcept>
#include <string>

namespace volmin {

// Base for everything the library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad input values: non-finite entries, rates outside their range, malformed files.
class ValueError : public Error {
 public:
  using Error::Error;
};

// A numerical failure: singular matrix, NaN loss, infeasible oracle.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Experiment configuration was rejected.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace volmin
