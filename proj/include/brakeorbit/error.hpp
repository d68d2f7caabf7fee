#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace brakeorbit {

enum class ErrorKind {
  InvalidNonlinearity,
  InvalidField,
  GridMismatch,
  NotAboveLevel,
  ShootingFailed,
  DictionaryTooSmall,
  ConstraintViolated,
  NoCrossing,
  NotConverged,
  ConstraintProjectionFailed,
  NoTransition,
  CoreNotConverged,
  Config,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Single exception type for every failure mode of the solver; `kind()`
/// identifies the contract that was broken.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Config error that names the offending key, e.g. "grid.n_r".
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(ErrorKind::Config, "config key '" + key + "': " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace brakeorbit
