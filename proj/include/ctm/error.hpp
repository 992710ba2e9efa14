#pragma once

#include <stdexcept>
#include <string>

namespace ctm {

/// Invalid user-supplied configuration (bad window spec, out-of-range
/// hyperparameters, unknown options).
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed or physically inconsistent input data.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Model files that fail validation (version, checksum, manifest).
class ModelError : public std::runtime_error {
public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ctm
