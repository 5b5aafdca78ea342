#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ninode {

/// Violated precondition: wrong dimensions, malformed structure, bad arguments.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, std::ptrdiff_t op_index = -1)
      : std::runtime_error(what), op_index_(op_index) {}

  /// Index of the tape operation that produced the value, or -1.
  std::ptrdiff_t op_index() const noexcept { return op_index_; }

 private:
  std::ptrdiff_t op_index_;
};

/// A certified constant could not be established or a regularity check failed.
class CertificationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed-loop integration left the admissible region.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double t, std::size_t step)
      : std::runtime_error(what), t_(t), step_(step) {}

  double time() const noexcept { return t_; }
  std::size_t step() const noexcept { return step_; }

 private:
  double t_;
  std::size_t step_;
};

/// Configuration or checkpoint document could not be parsed.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ninode
