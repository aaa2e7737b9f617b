#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tornado {

/// Malformed input file. `field()` names the header field or section that failed.
class parse_error : public std::runtime_error {
 public:
  parse_error(std::string field, const std::string& message)
      : std::runtime_error(message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// A model went non-finite during training.
class diverged_error : public std::runtime_error {
 public:
  diverged_error(std::size_t step, const std::string& message)
      : std::runtime_error(message + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace tornado
