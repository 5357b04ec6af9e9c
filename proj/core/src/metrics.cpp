#include "mletpf/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace mletpf::metrics {

double time_averaged_rmse(const Eigen::MatrixXd& estimates,
                          const Eigen::MatrixXd& truth) {
  if (estimates.rows() != truth.rows() || estimates.cols() != truth.cols()) {
    throw std::invalid_argument("time_averaged_rmse: shape mismatch");
  }
  if (estimates.rows() == 0) return 0.0;
  const double mse = (estimates - truth).rowwise().squaredNorm().mean();
  return std::sqrt(mse);
}

Eigen::VectorXd cumulative_rmse_series(const Eigen::MatrixXd& series,
                                       const Eigen::MatrixXd& reference) {
  if (series.rows() != reference.rows() || series.cols() != reference.cols()) {
    throw std::invalid_argument("cumulative_rmse_series: shape mismatch");
  }
  Eigen::VectorXd out(series.rows());
  double acc = 0.0;
  for (Eigen::Index k = 0; k < series.rows(); ++k) {
    acc += (series.row(k) - reference.row(k)).squaredNorm();
    out[k] = std::sqrt(acc / static_cast<double>(k + 1));
  }
  return out;
}

double variance_trace_estimate(const Eigen::MatrixXd& samples) {
  const auto n = samples.rows();
  if (n < 2) {
    throw std::invalid_argument("variance_trace_estimate: need at least 2 samples");
  }
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  return (samples.rowwise() - mean).squaredNorm() / static_cast<double>(n - 1);
}

double bias_estimate(const Eigen::VectorXd& diff_mean_L, int M) {
  if (M < 2) throw std::invalid_argument("bias_estimate: M must be >= 2");
  return diff_mean_L.norm() / static_cast<double>(M - 1);
}

double theoretical_cost(const std::vector<int>& schedule, const std::vector<double>& h,
                        double gamma, double t_end) {
  if (schedule.size() != h.size()) {
    throw std::invalid_argument("theoretical_cost: schedule and step lists differ");
  }
  double cost = 0.0;
  for (std::size_t l = 0; l < schedule.size(); ++l) {
    cost += std::pow(h[l], -gamma) * schedule[l] * t_end;
  }
  return cost;
}

double theoretical_cost_single(int N, double h, double gamma, double t_end) {
  return std::pow(h, -gamma) * N * t_end;
}

std::string RunSummary::to_json() const {
  nlohmann::json j;
  j["rmse"] = rmse;
  j["mean_abs_difference"] = mean_abs_difference;
  j["mean_variance_trace"] = mean_variance_trace;
  j["cost"] = {{"model_ops", cost.model_ops},
               {"transform_ops", cost.transform_ops},
               {"sort_ops", cost.sort_ops},
               {"likelihood_ops", cost.likelihood_ops},
               {"total", cost.total()},
               {"units",
                "model: component Euler updates; transform: solver elementary steps; "
                "sort: comparisons; likelihood: component evaluations"}};
  if (!config_echo.empty()) j["config"] = nlohmann::json::parse(config_echo);
  return j.dump(2);
}

}  // namespace mletpf::metrics
