#pragma once

#include <stdexcept>
#include <string>

namespace dastab {

/// Base class for every recoverable failure raised by the library. `kind()`
/// is a stable identifier used in machine-readable error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

/// The closed loop is not strictly stable, so the infinite-horizon cost is
/// unbounded.
class Unstable : public Error {
 public:
  explicit Unstable(const std::string& what) : Error("Unstable", what) {}
};

class NotStabilizable : public Error {
 public:
  explicit NotStabilizable(const std::string& what)
      : Error("NotStabilizable", what) {}
};

class NoWitnessFound : public Error {
 public:
  explicit NoWitnessFound(const std::string& what)
      : Error("NoWitnessFound", what) {}
};

/// Every rollout in a gradient query diverged; no gradient can be formed.
class DivergedAll : public Error {
 public:
  explicit DivergedAll(const std::string& what) : Error("DivergedAll", what) {}
};

class InnerDiverged : public Error {
 public:
  explicit InnerDiverged(const std::string& what)
      : Error("InnerDiverged", what) {}
};

class BudgetExceeded : public Error {
 public:
  explicit BudgetExceeded(const std::string& what)
      : Error("BudgetExceeded", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("ConfigError", what) {}
};

}  // namespace dastab
