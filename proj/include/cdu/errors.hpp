#pragma once

#include <stdexcept>
#include <string>

namespace cdu {

// Error categories. The CLI maps these onto exit codes:
// InvalidArgument/FormatError -> 2, IntegrityError -> 3, NumericalFailure -> 4.

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Configuration error located by a JSON pointer such as "/train/C".
class SchemaError : public InvalidArgument {
 public:
  SchemaError(const std::string& pointer, const std::string& what)
      : InvalidArgument(pointer + ": " + what), pointer_(pointer) {}
  const std::string& pointer() const { return pointer_; }

 private:
  std::string pointer_;
};

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CapabilityExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw InvalidArgument(what);
}

}  // namespace cdu
