#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mletpf/cost_ledger.hpp"

namespace mletpf::metrics {

/// sqrt( (1/Ny) sum_k ||estimate_k - truth_k||^2 )
double time_averaged_rmse(const Eigen::MatrixXd& estimates, const Eigen::MatrixXd& truth);

/// Entry k = sqrt( (1/k) sum_{i<=k} ||series_i - reference_i||^2 ).
Eigen::VectorXd cumulative_rmse_series(const Eigen::MatrixXd& series,
                                       const Eigen::MatrixXd& reference);

/// Trace of the unbiased sample covariance of difference samples (rows).
double variance_trace_estimate(const Eigen::MatrixXd& samples);

/// ||finest difference mean|| / (M - 1): the discretization-bias estimate.
double bias_estimate(const Eigen::VectorXd& diff_mean_L, int M);

/// sum_l h_l^{-gamma} N_l t_end
double theoretical_cost(const std::vector<int>& schedule, const std::vector<double>& h,
                        double gamma, double t_end);

/// Single-level comparator h^{-gamma} N t_end.
double theoretical_cost_single(int N, double h, double gamma, double t_end);

struct RunSummary {
  double rmse = 0.0;
  std::vector<double> mean_abs_difference;  // per level, mean over steps of ||diff||_1
  std::vector<double> mean_variance_trace;  // per level, mean over steps of Tr(V_l)
  CostLedger cost;
  std::string config_echo;

  std::string to_json() const;
};

}  // namespace mletpf::metrics
