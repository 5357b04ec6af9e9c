#pragma once

#include <cstdint>

namespace mletpf::metrics {

/// Operation counters split by where the work happens. Units are declared,
/// not canonical: a model op is one component update in an Euler step, a
/// transform op is one elementary step inside a coupling solver or transform
/// application, a sort op is one comparison, a likelihood op is one
/// component's contribution to a log-likelihood. Only scaling across runs is
/// meaningful.
struct CostLedger {
  std::uint64_t model_ops = 0;
  std::uint64_t transform_ops = 0;
  std::uint64_t sort_ops = 0;
  std::uint64_t likelihood_ops = 0;

  std::uint64_t total() const {
    return model_ops + transform_ops + sort_ops + likelihood_ops;
  }

  CostLedger& operator+=(const CostLedger& other) {
    model_ops += other.model_ops;
    transform_ops += other.transform_ops;
    sort_ops += other.sort_ops;
    likelihood_ops += other.likelihood_ops;
    return *this;
  }
};

}  // namespace mletpf::metrics
