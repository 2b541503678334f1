#pragma once

#include <stdexcept>
#include <string>

namespace stein {

/// Numeric blow-up caught by a guard (particle coordinates past the
/// threshold, NaN in a network). Carries a distinct exit code in the CLI.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace stein
