#include "mletpf/filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mletpf/errors.hpp"
#include "mletpf/transport.hpp"

namespace mletpf::filter {

Ensemble Ensemble::uniform(Eigen::MatrixXd particles, int level, double time) {
  Ensemble ens;
  const auto n = particles.rows();
  ens.particles = std::move(particles);
  ens.weights = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  ens.level = level;
  ens.time = time;
  return ens;
}

namespace {

void check_R(const Eigen::VectorXd& R_diag) {
  for (Eigen::Index i = 0; i < R_diag.size(); ++i) {
    if (!(R_diag[i] > 0.0)) {
      throw std::invalid_argument("observation covariance diagonal must be positive");
    }
  }
}

Eigen::VectorXd normalised_from_logs(const Eigen::VectorXd& prior,
                                     const Eigen::VectorXd& log_lik, double time) {
  // Log-space with max-subtraction so a sharp likelihood cannot underflow the
  // whole vector.
  double max_log = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < prior.size(); ++i) {
    if (prior[i] > 0.0 && log_lik[i] > max_log) max_log = log_lik[i];
  }
  Eigen::VectorXd w(prior.size());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < prior.size(); ++i) {
    w[i] = prior[i] > 0.0 ? prior[i] * std::exp(log_lik[i] - max_log) : 0.0;
    sum += w[i];
  }
  if (!(sum > 0.0) || !std::isfinite(sum)) {
    throw FilterError(FilterError::Kind::Degeneracy,
                      "importance weights degenerated at assimilation time " +
                          std::to_string(time),
                      -1, time);
  }
  return w / sum;
}

}  // namespace

double gaussian_log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& R_diag,
                               metrics::CostLedger* ledger) {
  if (x.size() != y.size() || x.size() != R_diag.size()) {
    throw std::invalid_argument("gaussian_log_likelihood: dimension mismatch");
  }
  check_R(R_diag);
  if (ledger) ledger->likelihood_ops += static_cast<std::uint64_t>(x.size());
  return -0.5 * ((x - y).array().square() / R_diag.array()).sum();
}

double localised_log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& R_diag, int m, double r_loc_R,
                                metrics::CostLedger* ledger) {
  if (x.size() != y.size() || x.size() != R_diag.size()) {
    throw std::invalid_argument("localised_log_likelihood: dimension mismatch");
  }
  check_R(R_diag);
  const int d = static_cast<int>(x.size());
  const Eigen::VectorXd taper = transport::localisation_taper(d, m, r_loc_R);
  double acc = 0.0;
  std::uint64_t ops = 0;
  for (int n = 0; n < d; ++n) {
    if (taper[n] == 0.0) continue;
    const double diff = x[n] - y[n];
    acc += taper[n] * diff * diff / R_diag[n];
    ++ops;
  }
  if (ledger) ledger->likelihood_ops += ops;
  return -0.5 * acc;
}

WeightSet update_weights(const Ensemble& ens, const Eigen::VectorXd& y,
                         const FilterConfig& cfg, metrics::CostLedger* ledger) {
  const int n = ens.size();
  const int d = ens.dim();
  WeightSet out;
  if (cfg.mode == TransformMode::GlobalMultivariate) {
    Eigen::VectorXd logs(n);
    for (int i = 0; i < n; ++i) {
      logs[i] = gaussian_log_likelihood(ens.particles.row(i), y, cfg.R_diag, ledger);
    }
    out.global = normalised_from_logs(ens.weights, logs, ens.time);
    return out;
  }
  out.localised = true;
  out.per_component.resize(n, d);
  Eigen::VectorXd logs(n);
  for (int m = 0; m < d; ++m) {
    for (int i = 0; i < n; ++i) {
      logs[i] = localised_log_likelihood(ens.particles.row(i), y, cfg.R_diag, m,
                                         cfg.r_loc_R, ledger);
    }
    out.per_component.col(m) = normalised_from_logs(ens.weights, logs, ens.time);
  }
  return out;
}

std::vector<int> sorted_order(const Eigen::VectorXd& values,
                              metrics::CostLedger* ledger) {
  std::vector<int> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t comparisons = 0;
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    ++comparisons;
    return values[a] < values[b];
  });
  if (ledger) ledger->sort_ops += comparisons;
  return order;
}

Eigen::VectorXd rank_reorder(const Eigen::VectorXd& original,
                             const Eigen::VectorXd& transformed,
                             metrics::CostLedger* ledger) {
  if (original.size() != transformed.size()) {
    throw std::invalid_argument("rank_reorder: length mismatch");
  }
  const auto orig_order = sorted_order(original, ledger);
  const auto trans_order = sorted_order(transformed, ledger);
  Eigen::VectorXd out(original.size());
  for (std::size_t r = 0; r < orig_order.size(); ++r) {
    out[orig_order[r]] = transformed[trans_order[r]];
  }
  return out;
}

namespace {

// Transform one component through the univariate monotone coupling computed
// in sorted space. Writing the b-th transformed value back to the particle
// holding the b-th smallest original value is exactly the rank reordering
// that preserves the copula.
void transform_component_monotone(const Eigen::VectorXd& values,
                                  const Eigen::VectorXd& weights,
                                  Eigen::Ref<Eigen::VectorXd> out,
                                  metrics::CostLedger* ledger) {
  const int n = static_cast<int>(values.size());
  const auto order = sorted_order(values, ledger);
  Eigen::VectorXd w_sorted(n);
  for (int a = 0; a < n; ++a) w_sorted[a] = weights[order[a]];
  const auto coupling = transport::monotone_coupling(w_sorted, ledger);
  Eigen::VectorXd transformed = Eigen::VectorXd::Zero(n);
  for (const auto& e : coupling.entries) {
    transformed[e.col] += n * e.mass * values[order[e.row]];
  }
  if (ledger) ledger->transform_ops += coupling.entries.size();
  for (int b = 0; b < n; ++b) out[order[b]] = transformed[b];
}

}  // namespace

Ensemble transform_ensemble(const Ensemble& ens, const WeightSet& weights,
                            const FilterConfig& cfg, metrics::CostLedger* ledger) {
  const int n = ens.size();
  const int d = ens.dim();
  Ensemble out;
  out.level = ens.level;
  out.time = ens.time;
  out.weights = Eigen::VectorXd::Constant(n, 1.0 / n);

  if (cfg.mode == TransformMode::GlobalMultivariate) {
    const Eigen::VectorXd sq = ens.particles.rowwise().squaredNorm();
    Eigen::MatrixXd cost = sq.replicate(1, n) + sq.transpose().replicate(n, 1) -
                           2.0 * ens.particles * ens.particles.transpose();
    cost = cost.cwiseMax(0.0);
    const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(n, 1.0 / n);
    const auto sol = transport::solve_transport(cost, weights.global, uniform, ledger);
    out.particles = Eigen::MatrixXd::Zero(n, d);
    for (const auto& e : sol.coupling.entries) {
      out.particles.row(e.col) += n * e.mass * ens.particles.row(e.row);
    }
    if (ledger) {
      ledger->transform_ops += sol.coupling.entries.size() * static_cast<std::uint64_t>(d);
    }
    return out;
  }

  out.particles.resize(n, d);
  if (cfg.r_loc_c == 0.0) {
    for (int m = 0; m < d; ++m) {
      Eigen::VectorXd col(n);
      transform_component_monotone(ens.particles.col(m), weights.component(m), col,
                                   ledger);
      out.particles.col(m) = col;
    }
    return out;
  }

  // r_loc_c > 0: one transport problem per component on the tapered cost; the
  // transformed components keep their original index alignment, no reordering.
  const auto C = transport::localisation_matrix(d, cfg.r_loc_c);
  const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (int m = 0; m < d; ++m) {
    const Eigen::MatrixXd cost = transport::localised_cost(ens.particles, m, C);
    const auto sol =
        transport::solve_transport(cost, weights.component(m), uniform, ledger);
    Eigen::VectorXd col = Eigen::VectorXd::Zero(n);
    for (const auto& e : sol.coupling.entries) {
      col[e.col] += n * e.mass * ens.particles(e.row, m);
    }
    if (ledger) ledger->transform_ops += sol.coupling.entries.size();
    out.particles.col(m) = col;
  }
  return out;
}

Eigen::VectorXd posterior_mean(const Ensemble& ens) {
  return ens.particles.transpose() * ens.weights;
}

Eigen::VectorXd weighted_mean(const Ensemble& ens, const WeightSet& weights) {
  if (!weights.localised) return ens.particles.transpose() * weights.global;
  Eigen::VectorXd mean(ens.dim());
  for (int m = 0; m < ens.dim(); ++m) {
    mean[m] = ens.particles.col(m).dot(weights.per_component.col(m));
  }
  return mean;
}

Ensemble etpf_assimilate(const Ensemble& ens, const Eigen::VectorXd& y,
                         const FilterConfig& cfg, metrics::CostLedger* ledger) {
  const WeightSet weights = update_weights(ens, y, cfg, ledger);
  return transform_ensemble(ens, weights, cfg, ledger);
}

}  // namespace mletpf::filter
