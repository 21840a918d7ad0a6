#pragma once

#include <stdexcept>
#include <string>

namespace evoqa {

/// Root of every error thrown by the library. Each module derives its own
/// error type carrying a module-specific code enum.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace evoqa
