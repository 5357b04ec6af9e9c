#pragma once

#include <stdexcept>
#include <string>

namespace mletpf {

/// Structured runtime failure of a filter run. Argument errors use
/// std::invalid_argument; this type is reserved for failures that carry
/// run context (which level, which assimilation time).
class FilterError : public std::runtime_error {
 public:
  enum class Kind { Divergence, Degeneracy, Solver };

  FilterError(Kind kind, const std::string& what, int level, double time)
      : std::runtime_error(what), kind_(kind), level_(level), time_(time) {}

  Kind kind() const { return kind_; }
  int level() const { return level_; }
  double time() const { return time_; }

 private:
  Kind kind_;
  int level_;
  double time_;
};

}  // namespace mletpf
