#pragma once

#include <stdexcept>
#include <string>

namespace dmn {

// Error families. The CLI maps them onto exit codes:
//   ConfigError -> 2, DataError -> 3, everything else -> 4.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProviderError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dmn
