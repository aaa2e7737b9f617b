#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tornado/experiment.hpp"

namespace tornado {

/// Rejected configuration. `key()` names the offending key ("line N" for
/// syntax errors).
class config_error : public std::invalid_argument {
 public:
  enum class Kind { Syntax, UnknownKey, TypeMismatch, Constraint };

  config_error(Kind kind, std::string key, const std::string& message)
      : std::invalid_argument(message), kind_(kind), key_(std::move(key)) {}

  Kind kind() const noexcept { return kind_; }
  const std::string& key() const noexcept { return key_; }

 private:
  Kind kind_;
  std::string key_;
};

/// Lines of `key = value`; '#' starts a comment; blank lines are ignored.
/// Overrides ("key=value") are applied after the text, then everything is
/// validated. An empty text yields the defaults.
ExperimentSpec parse_config_text(std::string_view text, const std::vector<std::string>& overrides = {});
ExperimentSpec parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

/// Every key with its effective value, in a form parse_config_text accepts.
std::string effective_config_text(const ExperimentSpec& spec);

/// All recognised keys in output order.
const std::vector<std::string>& config_keys();

}  // namespace tornado
