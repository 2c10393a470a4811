#pragma once

#include <stdexcept>
#include <string>

namespace patchseg {

// Bad input data: malformed files, inconsistent shapes, missing artifacts.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Bad run configuration: invalid flags, missing required options.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace patchseg
