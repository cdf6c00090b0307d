#pragma once

#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace corrmap {

/// Caller supplied something that violates an operation's preconditions.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Matrix factorization failed even after the full diagonal jitter ladder.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what, std::vector<double> jitters = {})
      : std::runtime_error(what), jitters_(std::move(jitters)) {}

  const std::vector<double>& attempted_jitters() const noexcept { return jitters_; }

 private:
  std::vector<double> jitters_;
};

/// Adaptive ODE step size collapsed below machine resolution.
class StiffnessError : public std::runtime_error {
 public:
  StiffnessError(const std::string& what, double time)
      : std::runtime_error(what), time_(time) {}

  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// A model evaluation inside a sampling design failed; carries the design indices.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, std::size_t point, std::size_t replicate)
      : std::runtime_error(format(what, point, replicate)), point_(point), replicate_(replicate) {}

  std::size_t point() const noexcept { return point_; }
  std::size_t replicate() const noexcept { return replicate_; }

 private:
  static std::string format(const std::string& what, std::size_t i, std::size_t j) {
    std::ostringstream os;
    os << "design point (" << i << ", " << j << "): " << what;
    return os.str();
  }
  std::size_t point_;
  std::size_t replicate_;
};

/// Configuration text could not be parsed. Line and column are 1-based;
/// 0 means the error is not tied to a position.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, std::size_t line, std::size_t column, const std::string& file = {})
      : std::runtime_error(format(what, line, column, file)),
        message_(what),
        file_(file),
        line_(line),
        column_(column) {}

  /// Same error attributed to a file.
  ConfigError in_file(const std::string& file) const { return ConfigError(message_, line_, column_, file); }

  const std::string& message() const noexcept { return message_; }
  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  static std::string format(const std::string& what, std::size_t line, std::size_t column, const std::string& file) {
    std::ostringstream os;
    if (!file.empty()) os << file << ": ";
    if (line > 0) os << "line " << line << ", column " << column << ": ";
    os << what;
    return os.str();
  }
  std::string message_;
  std::string file_;
  std::size_t line_;
  std::size_t column_;
};

}  // namespace corrmap
