#pragma once

#include <stdexcept>
#include <string>

namespace mmr {

// Error taxonomy mirrors the CLI exit-code contract:
//   UsageError -> 1, DataError -> 2, NumericError -> 3.

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid files, failed validation, malformed or inconsistent inputs.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric failures: divergence, non-finite values, degenerate systems.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mmr
