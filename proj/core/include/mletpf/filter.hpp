#pragma once

#include <Eigen/Dense>
#include <limits>
#include <vector>

#include "mletpf/cost_ledger.hpp"

namespace mletpf::filter {

/// N particles in R^d with a probability-weight vector. After any transform
/// the weights are uniform 1/N.
struct Ensemble {
  Eigen::MatrixXd particles;  // N x d
  Eigen::VectorXd weights;    // length N, sums to 1
  int level = 0;
  double time = 0.0;

  int size() const { return static_cast<int>(particles.rows()); }
  int dim() const { return static_cast<int>(particles.cols()); }

  static Ensemble uniform(Eigen::MatrixXd particles, int level = 0, double time = 0.0);
};

enum class TransformMode {
  GlobalMultivariate,     // one transport problem on the full squared distance
  LocalisedPerComponent,  // d transport problems on tapered costs
};

struct FilterConfig {
  TransformMode mode = TransformMode::GlobalMultivariate;
  double r_loc_c = 0.0;
  double r_loc_R = std::numeric_limits<double>::infinity();
  Eigen::VectorXd R_diag;  // observation covariance diagonal
};

/// -(x-y)' R^{-1} (x-y) / 2 with the normalizing constant dropped (it cancels
/// in weight normalization).
double gaussian_log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& R_diag,
                               metrics::CostLedger* ledger = nullptr);

/// Same with the diagonal taper of radius r_loc_R centred at component m.
double localised_log_likelihood(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                                const Eigen::VectorXd& R_diag, int m, double r_loc_R,
                                metrics::CostLedger* ledger = nullptr);

/// Output of one weight update: either the single global vector or one
/// normalised vector per component.
struct WeightSet {
  bool localised = false;
  Eigen::VectorXd global;         // length N (global mode)
  Eigen::MatrixXd per_component;  // N x d (localised mode)

  const Eigen::VectorXd component(int m) const {
    return localised ? per_component.col(m) : global;
  }
};

WeightSet update_weights(const Ensemble& ens, const Eigen::VectorXd& y,
                         const FilterConfig& cfg, metrics::CostLedger* ledger = nullptr);

/// Permutes `transformed` so its ranks match the ranks of `original`
/// (ties in `original` broken by index).
Eigen::VectorXd rank_reorder(const Eigen::VectorXd& original,
                             const Eigen::VectorXd& transformed,
                             metrics::CostLedger* ledger = nullptr);

/// Linear ensemble transform x_j <- sum_i N T_ij x_i. Global mode solves one
/// transport problem on ||x_i - x_j||^2; localised mode solves one per
/// component on the tapered cost (univariate monotone solver when r_loc_c = 0,
/// with rank reordering to restore the copula). The transformed mean equals
/// the weighted prior mean up to rounding.
Ensemble transform_ensemble(const Ensemble& ens, const WeightSet& weights,
                            const FilterConfig& cfg,
                            metrics::CostLedger* ledger = nullptr);

Eigen::VectorXd posterior_mean(const Ensemble& ens);

/// Weighted prior mean per component under a WeightSet (localised mode uses
/// the m-th weight vector for component m). This is the value the transform
/// preserves.
Eigen::VectorXd weighted_mean(const Ensemble& ens, const WeightSet& weights);

/// update_weights followed by transform_ensemble.
Ensemble etpf_assimilate(const Ensemble& ens, const Eigen::VectorXd& y,
                         const FilterConfig& cfg, metrics::CostLedger* ledger = nullptr);

/// Stable argsort of values (ascending, ties by index).
std::vector<int> sorted_order(const Eigen::VectorXd& values,
                              metrics::CostLedger* ledger = nullptr);

}  // namespace mletpf::filter
