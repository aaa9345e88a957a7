#pragma once

#include <stdexcept>
#include <string>

namespace dragon {

/// Bad argument values, dimension mismatches, malformed files.
class InvalidInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A matrix required to be positive semi-definite has a significantly
/// negative eigenvalue.
class NotPsd : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A split or normalization cannot proceed because every value is equal.
class AllTied : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dragon
