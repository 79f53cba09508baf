#pragma once

#include <stdexcept>
#include <string>

namespace funreg {

// Malformed or inconsistent input data (files, samples, id mismatches).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: singular systems, degenerate scatter, failed resampling.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace funreg
