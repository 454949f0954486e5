#pragma once

#include <stdexcept>
#include <string>

namespace ivp {

/// Invalid or inconsistent configuration values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller violated an operation's precondition (shape, range, ordering).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed dataset, checkpoint or record file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void require(bool ok, const std::string& what) {
  if (!ok) throw ContractError(what);
}
inline void require_config(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}
}  // namespace detail

}  // namespace ivp
