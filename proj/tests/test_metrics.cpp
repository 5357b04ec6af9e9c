#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mletpf/metrics.hpp"
#include "mletpf/models.hpp"
#include "mletpf/multilevel.hpp"

using namespace mletpf;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("time averaged rmse") {
  MatrixXd truth(2, 1);
  truth << 1.0, 2.0;
  CHECK(metrics::time_averaged_rmse(truth, truth) == 0.0);

  MatrixXd offset = truth.array() + 0.3;
  CHECK(metrics::time_averaged_rmse(offset, truth) == doctest::Approx(0.3));

  MatrixXd est(2, 1);
  est << 4.0, 6.0;
  CHECK(metrics::time_averaged_rmse(est, truth) ==
        doctest::Approx(std::sqrt(25.0 / 2.0)));

  CHECK_THROWS_AS(metrics::time_averaged_rmse(est, MatrixXd::Zero(3, 1)),
                  std::invalid_argument);
}

TEST_CASE("cumulative rmse series") {
  MatrixXd ref = MatrixXd::Zero(3, 1);
  CHECK(metrics::cumulative_rmse_series(ref, ref).isZero(0.0));

  MatrixXd ones = MatrixXd::Ones(4, 1);
  CHECK(metrics::cumulative_rmse_series(ones, MatrixXd::Zero(4, 1))
            .isApproxToConstant(1.0));

  MatrixXd series(2, 1);
  series << 0.0, 2.0;
  const VectorXd cum = metrics::cumulative_rmse_series(series, MatrixXd::Zero(2, 1));
  CHECK(cum[0] == 0.0);
  CHECK(cum[1] == doctest::Approx(std::sqrt(2.0)));

  // The final cumulative entry is the time-averaged RMSE of the same arrays.
  MatrixXd a = MatrixXd::Random(7, 3);
  MatrixXd b = MatrixXd::Random(7, 3);
  const VectorXd full = metrics::cumulative_rmse_series(a, b);
  CHECK(full[6] == doctest::Approx(metrics::time_averaged_rmse(a, b)).epsilon(1e-12));
}

TEST_CASE("variance trace estimate") {
  CHECK(metrics::variance_trace_estimate(MatrixXd::Constant(5, 2, 1.3)) == 0.0);

  MatrixXd pm(2, 1);
  pm << -1.0, 1.0;
  CHECK(metrics::variance_trace_estimate(pm) == doctest::Approx(2.0));

  MatrixXd two_d(2, 2);
  two_d << 1, 0, -1, 0;
  CHECK(metrics::variance_trace_estimate(two_d) == doctest::Approx(2.0));

  CHECK_THROWS_AS(metrics::variance_trace_estimate(MatrixXd::Zero(1, 2)),
                  std::invalid_argument);
}

TEST_CASE("bias estimate") {
  CHECK(metrics::bias_estimate(VectorXd::Zero(3), 2) == 0.0);
  CHECK(metrics::bias_estimate(VectorXd::Constant(1, 0.1), 2) == doctest::Approx(0.1));
  CHECK(metrics::bias_estimate(VectorXd::Constant(1, 0.3), 4) == doctest::Approx(0.1));
  CHECK_THROWS_AS(metrics::bias_estimate(VectorXd::Zero(1), 1), std::invalid_argument);
}

TEST_CASE("theoretical cost") {
  CHECK(metrics::theoretical_cost({10}, {1.0}, 1.0, 1.0) == doctest::Approx(10.0));
  CHECK(metrics::theoretical_cost({4, 1}, {1.0, 0.5}, 1.0, 1.0) == doctest::Approx(6.0));
  CHECK(metrics::theoretical_cost({4, 1}, {1.0, 0.5}, 0.0, 2.0) == doctest::Approx(10.0));
  CHECK(metrics::theoretical_cost_single(10, 0.5, 1.0, 1.0) == doctest::Approx(20.0));
  CHECK_THROWS_AS(metrics::theoretical_cost({1, 2}, {1.0}, 1.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("ledger merge and totals") {
  metrics::CostLedger a{1, 2, 3, 4};
  metrics::CostLedger b{10, 20, 30, 40};
  a += b;
  CHECK(a.model_ops == 11);
  CHECK(a.total() == 110);
}

TEST_CASE("measured model ops equal the cost formula") {
  const auto model = models::double_well_model(0.5);
  const double t_end = 2.0;
  const auto twin = models::synthesize_observations(
      model, VectorXd::Constant(1, 0.6), 0.0625, t_end, 4, 0.0625, 2, 88,
      VectorXd::Zero(1));

  multilevel::MultilevelConfig cfg;
  cfg.M = 2;
  cfg.h0 = 0.0625;
  cfg.L = 2;
  cfg.N0 = 40;
  cfg.filter.mode = filter::TransformMode::LocalisedPerComponent;
  cfg.filter.R_diag = VectorXd::Constant(1, 0.6);
  cfg.init_mean = VectorXd::Zero(1);

  const auto run = multilevel::run_mletpf(model, twin.stream, cfg, 3, 1);

  // Every Euler step increments model_ops by exactly d, so the measured count
  // is the gamma = 1 formula evaluated on the fine steps plus, for l > 0, the
  // coarse member's steps.
  std::vector<double> h_fine, h_coarse;
  std::vector<int> coarse_schedule;
  for (int l = 0; l <= cfg.L; ++l) h_fine.push_back(cfg.h0 * std::pow(2.0, -l));
  for (int l = 1; l <= cfg.L; ++l) {
    h_coarse.push_back(cfg.h0 * std::pow(2.0, -(l - 1)));
    coarse_schedule.push_back(run.schedule[l]);
  }
  const double expected =
      metrics::theoretical_cost(run.schedule, h_fine, 1.0, t_end) +
      metrics::theoretical_cost(coarse_schedule, h_coarse, 1.0, t_end);
  CHECK(static_cast<double>(run.ledger.model_ops) ==
        doctest::Approx(expected * model.dim).epsilon(1e-12));
}

TEST_CASE("instrumentation does not change numerical results") {
  const auto model = models::double_well_model(0.5);
  MatrixXd with_ledger = MatrixXd::Constant(6, 1, 0.4);
  MatrixXd without_ledger = with_ledger;
  metrics::CostLedger ledger;
  models::propagate_particles(with_ledger, model, 0.0625, 1, 0, 8, {5, 1}, &ledger);
  models::propagate_particles(without_ledger, model, 0.0625, 1, 0, 8, {5, 1}, nullptr);
  CHECK((with_ledger.array() == without_ledger.array()).all());
  CHECK(ledger.model_ops == 6 * 8);
}

TEST_CASE("run summary serializes") {
  metrics::RunSummary summary;
  summary.rmse = 0.5;
  summary.mean_abs_difference = {0.1, 0.2};
  summary.mean_variance_trace = {0.3, 0.4};
  summary.cost.model_ops = 7;
  const auto text = summary.to_json();
  CHECK(text.find("\"rmse\"") != std::string::npos);
  CHECK(text.find("\"model_ops\": 7") != std::string::npos);
}
