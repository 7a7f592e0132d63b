#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace lagid {

/// Precondition on shapes, sizes or arguments violated by the caller.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid or inconsistent configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite intermediate values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mass matrix not positive definite or too badly conditioned to invert.
class SingularMassError : public NumericError {
 public:
  using NumericError::NumericError;
};

/// The model does not identify the requested quantity (energy, force terms).
class CapabilityError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class IntegrationError : public std::runtime_error {
 public:
  IntegrationError(const std::string& what, double failure_time)
      : std::runtime_error(what), failure_time_(failure_time) {}
  double failure_time() const { return failure_time_; }

 private:
  double failure_time_;
};

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LinearizationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DesignError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training stopped because too many segments failed to integrate.
class TrainingAbort : public std::runtime_error {
 public:
  TrainingAbort(const std::string& what, std::vector<std::size_t> segments)
      : std::runtime_error(what), segments_(std::move(segments)) {}
  const std::vector<std::size_t>& failing_segments() const { return segments_; }

 private:
  std::vector<std::size_t> segments_;
};

}  // namespace lagid
