#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mletpf/filter.hpp"
#include "mletpf/metrics.hpp"
#include "mletpf/models.hpp"
#include "mletpf/multilevel.hpp"

namespace mletpf::experiments {

/// One experiment, fully resolved from a config file (desk-scale overrides
/// already applied).
struct ExperimentConfig {
  std::string name;

  // model
  std::string model_type;  // double_well | lorenz63 | lorenz96
  double dw_xi = 0.5;
  double l63_phi = 0.4;
  int l96_dim = 40;
  double l96_forcing = 8.0;
  double l96_dx = 0.25;
  double l96_noise = 0.4;

  // observations
  Eigen::VectorXd R_diag;
  double dt = 0.0;
  double t_end = 0.0;
  std::uint64_t obs_seed = 0;
  int ref_level_offset = 2;
  Eigen::VectorXd ref_init;

  // filter
  filter::FilterConfig filter;

  // multilevel
  int M = 2;
  double h0 = 0.0;
  int L = 0;
  int N0 = 1;
  double schedule_exponent = 1.5;
  double alpha = 1.0;

  // initial distribution pi0 = N(init_mean, init_std^2 I)
  Eigen::VectorXd init_mean;
  double init_std = 1.0;

  // accuracy sweep
  std::vector<double> epsilons;
  int truth_N_factor = 16;
  int truth_L_offset = 2;

  std::uint64_t seed = 0;

  models::ModelSpec make_model() const;
  multilevel::MultilevelConfig make_multilevel(int L_override = -1,
                                               int N0_override = -1) const;
  int dim() const;

  /// Canonical JSON echo of every resolved field; its FNV-1a hash keys output
  /// headers and the truth-proxy cache.
  std::string canonical_json() const;
  std::string hash_hex() const;
};

/// Parses and validates a config file. Validation failures throw
/// std::invalid_argument listing every offending field by name. When
/// desk_scale is set, the file's "desk_scale" block is merged over the base
/// fields first.
ExperimentConfig load_experiment_config(const std::string& path, bool desk_scale);

/// Ordinary least-squares slope of y against x.
double linear_slope(const std::vector<double>& x, const std::vector<double>& y);

struct VarianceDecayRow {
  int level = 0;
  double mean_variance_trace = 0.0;
  double mean_abs_difference = 0.0;  // mean over steps of ||difference mean||_1
};

struct VarianceDecayResult {
  std::vector<VarianceDecayRow> rows;  // levels 1..L
  double variance_slope = 0.0;         // log2 fit over levels
  double difference_slope = 0.0;
  multilevel::MultilevelRun run;
};

VarianceDecayResult variance_decay(const ExperimentConfig& cfg, std::uint64_t seed,
                                   int threads, const std::string& out_dir);

struct CostAccuracyRow {
  double epsilon = 0.0;
  double rmse_mletpf = 0.0;
  metrics::CostLedger cost_mletpf;
  double rmse_etpf = 0.0;
  metrics::CostLedger cost_etpf;
};

struct CostAccuracyResult {
  std::vector<CostAccuracyRow> rows;
  double mletpf_slope = 0.0;  // log cost vs log rmse
  double etpf_slope = 0.0;
};

CostAccuracyResult cost_vs_accuracy(const ExperimentConfig& cfg, std::uint64_t seed,
                                    int threads, const std::string& out_dir);

struct StabilityResult {
  Eigen::VectorXd times;
  Eigen::VectorXd obs_rmse;        // cumulative, observations vs reference
  Eigen::VectorXd estimator_rmse;  // cumulative, estimator vs reference
  Eigen::VectorXd obs_rmse_sq;     // same for elementwise second moments
  Eigen::VectorXd estimator_rmse_sq;
};

StabilityResult stability(const ExperimentConfig& cfg, std::uint64_t seed, int threads,
                          const std::string& out_dir);

/// Full-run drivers behind `run-mletpf` / `run-etpf`: write the diagnostics
/// CSV and the RunSummary JSON, return the summary.
metrics::RunSummary run_mletpf_experiment(const ExperimentConfig& cfg,
                                          std::uint64_t seed, int threads,
                                          const std::string& out_dir);
metrics::RunSummary run_etpf_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                                        const std::string& out_dir);

}  // namespace mletpf::experiments
