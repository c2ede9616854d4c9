#pragma once

#include <stdexcept>
#include <string>

namespace foepnr {

// Precondition violated by a caller-supplied value (bad dimensions, negative
// intensities, even kernel sizes, ...).
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

// Unreadable or malformed files.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite energies, solver breakdown, training with no usable samples.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidInput(what);
}

}  // namespace foepnr
