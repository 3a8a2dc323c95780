#pragma once

#include <stdexcept>
#include <string>

namespace graphnav {

// Thrown when a NaN/Inf shows up in an op output or a metric.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad or unvalidatable experiment config.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// A required input artifact (dataset, checkpoint, world file) is absent or
// does not match what the run expects.
class MissingInputError : public std::runtime_error {
 public:
  explicit MissingInputError(const std::string& msg) : std::runtime_error(msg) {}
};

// Refusal to overwrite an existing artifact without --force.
class ExistsError : public std::runtime_error {
 public:
  explicit ExistsError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace graphnav
