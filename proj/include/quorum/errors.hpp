#pragma once

#include <stdexcept>
#include <string>

namespace quorum {

// Bad invocation: unusable flags, impossible knob combinations.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Unusable input data or artifacts: malformed corpus records, tampered
// plans, mismatched transcript headers, locked output directories.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace quorum
