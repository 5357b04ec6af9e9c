#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "mletpf/errors.hpp"
#include "mletpf/filter.hpp"

using namespace mletpf;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

filter::FilterConfig global_config(const VectorXd& R) {
  filter::FilterConfig cfg;
  cfg.mode = filter::TransformMode::GlobalMultivariate;
  cfg.R_diag = R;
  return cfg;
}

filter::FilterConfig localised_config(const VectorXd& R, double r_c = 0.0,
                                      double r_R = kInf) {
  filter::FilterConfig cfg;
  cfg.mode = filter::TransformMode::LocalisedPerComponent;
  cfg.r_loc_c = r_c;
  cfg.r_loc_R = r_R;
  cfg.R_diag = R;
  return cfg;
}

MatrixXd random_particles(std::mt19937& gen, int n, int d) {
  std::normal_distribution<double> normal;
  MatrixXd particles(n, d);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < d; ++c) particles(i, c) = normal(gen);
  }
  return particles;
}

VectorXd random_simplex(std::mt19937& gen, int n) {
  std::exponential_distribution<double> expo(1.0);
  VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = expo(gen) + 1e-9;
  w /= w.sum();
  return w;
}

}  // namespace

TEST_CASE("gaussian log likelihood") {
  const VectorXd y = VectorXd::Constant(2, 0.5);
  CHECK(filter::gaussian_log_likelihood(y, y, VectorXd::Ones(2)) == 0.0);

  VectorXd x1(1), y1(1);
  x1 << 2.0;
  y1 << 0.0;
  CHECK(filter::gaussian_log_likelihood(x1, y1, VectorXd::Constant(1, 2.0)) ==
        doctest::Approx(-1.0));

  CHECK(filter::gaussian_log_likelihood(VectorXd::Ones(2), VectorXd::Zero(2),
                                        VectorXd::Ones(2)) == doctest::Approx(-1.0));

  CHECK_THROWS_AS(
      filter::gaussian_log_likelihood(x1, y1, VectorXd::Zero(1)),
      std::invalid_argument);
}

TEST_CASE("localised log likelihood") {
  const VectorXd x = VectorXd::Ones(3);
  const VectorXd y = VectorXd::Zero(3);
  const VectorXd R = VectorXd::Ones(3);

  CHECK(filter::localised_log_likelihood(x, y, R, 1, kInf) ==
        doctest::Approx(filter::gaussian_log_likelihood(x, y, R)));
  CHECK(filter::localised_log_likelihood(x, y, R, 1, 0.0) == doctest::Approx(-0.5));
  // taper (0.5, 1, 0.5) at radius 1
  CHECK(filter::localised_log_likelihood(x, y, R, 1, 1.0) == doctest::Approx(-1.0));
}

TEST_CASE("update weights") {
  const VectorXd R = VectorXd::Ones(1);

  SUBCASE("flat likelihood leaves weights unchanged") {
    filter::Ensemble ens;
    ens.particles = MatrixXd::Constant(3, 1, 0.7);  // identical particles
    ens.weights.resize(3);
    ens.weights << 0.2, 0.5, 0.3;
    const auto w = filter::update_weights(ens, VectorXd::Zero(1), global_config(R));
    CHECK(w.global.isApprox(ens.weights, 1e-14));
  }

  SUBCASE("log-likelihoods (0, -ln 3) give weights (0.75, 0.25)") {
    filter::Ensemble ens;
    ens.particles.resize(2, 1);
    ens.particles << 0.0, std::sqrt(2.0 * std::log(3.0));
    ens.weights = VectorXd::Constant(2, 0.5);
    const auto w = filter::update_weights(ens, VectorXd::Zero(1), global_config(R));
    CHECK(w.global[0] == doctest::Approx(0.75));
    CHECK(w.global[1] == doctest::Approx(0.25));
  }

  SUBCASE("zero prior mass stays zero") {
    filter::Ensemble ens;
    ens.particles.resize(2, 1);
    ens.particles << 0.0, 1.0;
    ens.weights.resize(2);
    ens.weights << 1.0, 0.0;
    const auto w = filter::update_weights(ens, VectorXd::Zero(1), global_config(R));
    CHECK(w.global[0] == 1.0);
    CHECK(w.global[1] == 0.0);
  }

  SUBCASE("normalization holds to 1e-12") {
    std::mt19937 gen(5);
    for (int trial = 0; trial < 30; ++trial) {
      filter::Ensemble ens;
      ens.particles = random_particles(gen, 17, 3);
      ens.weights = random_simplex(gen, 17);
      const auto w = filter::update_weights(ens, VectorXd::Zero(3),
                                            global_config(VectorXd::Ones(3)));
      CHECK(std::abs(w.global.sum() - 1.0) < 1e-12);
      const auto wl = filter::update_weights(
          ens, VectorXd::Zero(3), localised_config(VectorXd::Ones(3), 0.0, 1.0));
      for (int m = 0; m < 3; ++m) {
        CHECK(std::abs(wl.per_component.col(m).sum() - 1.0) < 1e-12);
      }
    }
  }

  SUBCASE("degenerate weights raise a structured error") {
    filter::Ensemble ens;
    ens.particles.resize(2, 1);
    ens.particles << std::numeric_limits<double>::quiet_NaN(), 0.0;
    ens.weights = VectorXd::Constant(2, 0.5);
    ens.time = 3.25;
    CHECK_THROWS_AS(filter::update_weights(ens, VectorXd::Zero(1), global_config(R)),
                    FilterError);
  }
}

TEST_CASE("rank reorder") {
  VectorXd original(3), transformed(3);
  original << 1.0, 2.0, 3.0;
  transformed << 4.0, 5.0, 6.0;
  CHECK(filter::rank_reorder(original, transformed) == transformed);

  original << 3.0, 1.0, 2.0;
  transformed << 10.0, 20.0, 30.0;
  VectorXd expected(3);
  expected << 30.0, 10.0, 20.0;
  CHECK(filter::rank_reorder(original, transformed) == expected);

  original.setConstant(1.0);
  transformed << 9.0, 7.0, 8.0;
  expected << 7.0, 8.0, 9.0;  // ties broken by original index
  CHECK(filter::rank_reorder(original, transformed) == expected);
}

TEST_CASE("posterior mean") {
  filter::Ensemble ens;
  ens.particles.resize(2, 1);
  ens.particles << 0.0, 1.0;
  ens.weights = VectorXd::Constant(2, 0.5);
  CHECK(filter::posterior_mean(ens)[0] == doctest::Approx(0.5));

  ens.weights << 1.0, 0.0;
  CHECK(filter::posterior_mean(ens)[0] == 0.0);

  ens.weights << 0.75, 0.25;
  CHECK(filter::posterior_mean(ens)[0] == doctest::Approx(0.25));
}

TEST_CASE("transform examples") {
  SUBCASE("uniform weights are a fixed point of the global transform") {
    std::mt19937 gen(9);
    filter::Ensemble ens = filter::Ensemble::uniform(random_particles(gen, 6, 2));
    filter::WeightSet w;
    w.global = ens.weights;
    const auto out =
        filter::transform_ensemble(ens, w, global_config(VectorXd::Ones(2)));
    CHECK(out.particles.isApprox(ens.particles, 1e-12));
  }

  SUBCASE("two-particle transform, both solver paths") {
    filter::Ensemble ens;
    ens.particles.resize(2, 1);
    ens.particles << 0.0, 1.0;
    ens.weights = VectorXd::Constant(2, 0.5);
    filter::WeightSet w;
    w.global = VectorXd(2);
    w.global << 0.75, 0.25;

    const auto global_out =
        filter::transform_ensemble(ens, w, global_config(VectorXd::Ones(1)));
    CHECK(global_out.particles(0, 0) == doctest::Approx(0.0));
    CHECK(global_out.particles(1, 0) == doctest::Approx(0.5));
    CHECK(global_out.weights.isApproxToConstant(0.5));

    filter::WeightSet wl;
    wl.localised = true;
    wl.per_component = w.global;
    const auto local_out =
        filter::transform_ensemble(ens, wl, localised_config(VectorXd::Ones(1)));
    CHECK(local_out.particles.isApprox(global_out.particles, 1e-12));
  }

  SUBCASE("all mass on one particle collapses the ensemble") {
    std::mt19937 gen(13);
    filter::Ensemble ens = filter::Ensemble::uniform(random_particles(gen, 5, 2));
    filter::WeightSet w;
    w.global = VectorXd::Zero(5);
    w.global[0] = 1.0;
    const auto out =
        filter::transform_ensemble(ens, w, global_config(VectorXd::Ones(2)));
    for (int j = 0; j < 5; ++j) {
      CHECK(out.particles.row(j).isApprox(ens.particles.row(0), 1e-12));
    }
  }
}

TEST_CASE("transform preserves the weighted mean") {
  std::mt19937 gen(21);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(gen() % 63);
    const int d = 1 + static_cast<int>(gen() % 5);
    filter::Ensemble ens = filter::Ensemble::uniform(random_particles(gen, n, d));
    const bool localised = trial % 2 == 0;
    filter::FilterConfig cfg = localised
                                   ? localised_config(VectorXd::Ones(d), 0.0, 1.0)
                                   : global_config(VectorXd::Ones(d));
    filter::WeightSet w;
    w.localised = localised;
    if (localised) {
      w.per_component.resize(n, d);
      for (int m = 0; m < d; ++m) w.per_component.col(m) = random_simplex(gen, n);
    } else {
      w.global = random_simplex(gen, n);
    }
    const VectorXd target = filter::weighted_mean(ens, w);
    const auto out = filter::transform_ensemble(ens, w, cfg);
    const VectorXd achieved = out.particles.colwise().mean();
    for (int m = 0; m < d; ++m) {
      CHECK(std::abs(achieved[m] - target[m]) <= 1e-9 * (1.0 + std::abs(target[m])));
    }
    // Output stays in the componentwise convex hull of the input.
    for (int m = 0; m < d; ++m) {
      CHECK(out.particles.col(m).minCoeff() >=
            ens.particles.col(m).minCoeff() - 1e-12);
      CHECK(out.particles.col(m).maxCoeff() <=
            ens.particles.col(m).maxCoeff() + 1e-12);
    }
  }
}

TEST_CASE("localised transform with r_loc_c > 0 also preserves the weighted mean") {
  std::mt19937 gen(27);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(gen() % 15);
    const int d = 3;
    filter::Ensemble ens = filter::Ensemble::uniform(random_particles(gen, n, d));
    filter::WeightSet w;
    w.localised = true;
    w.per_component.resize(n, d);
    for (int m = 0; m < d; ++m) w.per_component.col(m) = random_simplex(gen, n);
    const auto cfg = localised_config(VectorXd::Ones(d), 1.0, 1.0);
    const VectorXd target = filter::weighted_mean(ens, w);
    const auto out = filter::transform_ensemble(ens, w, cfg);
    const VectorXd achieved = out.particles.colwise().mean();
    for (int m = 0; m < d; ++m) {
      CHECK(std::abs(achieved[m] - target[m]) <= 1e-9 * (1.0 + std::abs(target[m])));
    }
  }
}

TEST_CASE("univariate localised transform equals the global univariate transform") {
  std::mt19937 gen(33);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 2 + static_cast<int>(gen() % 30);
    filter::Ensemble ens = filter::Ensemble::uniform(random_particles(gen, n, 1));
    const VectorXd y = VectorXd::Constant(1, 0.3);
    const VectorXd R = VectorXd::Constant(1, 0.8);
    const auto global_out = filter::etpf_assimilate(ens, y, global_config(R));
    const auto local_out = filter::etpf_assimilate(ens, y, localised_config(R));
    CHECK(global_out.particles.isApprox(local_out.particles, 1e-10));
  }
}

TEST_CASE("etpf assimilate") {
  SUBCASE("flat likelihood and uniform prior change nothing") {
    filter::Ensemble ens;
    ens.particles = MatrixXd::Constant(4, 1, 2.0);
    ens.weights = VectorXd::Constant(4, 0.25);
    const auto out =
        filter::etpf_assimilate(ens, VectorXd::Zero(1), global_config(VectorXd::Ones(1)));
    CHECK(out.particles.isApprox(ens.particles, 1e-12));
  }

  SUBCASE("single particle is invariant") {
    filter::Ensemble ens;
    ens.particles = MatrixXd::Constant(1, 1, -1.3);
    ens.weights = VectorXd::Ones(1);
    const auto out =
        filter::etpf_assimilate(ens, VectorXd::Zero(1), global_config(VectorXd::Ones(1)));
    CHECK(out.particles(0, 0) == doctest::Approx(-1.3));
    CHECK(out.weights[0] == 1.0);
  }

  SUBCASE("two-particle composition end to end") {
    // Weights (0.75, 0.25) arise from log-likelihoods (0, -ln 3); the
    // transform then maps (0, 1) to (0, 0.5).
    filter::Ensemble ens;
    ens.particles.resize(2, 1);
    ens.particles << 0.0, 1.0;
    ens.weights = VectorXd::Constant(2, 0.5);
    VectorXd y(1);
    y << 0.0;
    const double R_val = 1.0 / (2.0 * std::log(3.0));
    const auto out =
        filter::etpf_assimilate(ens, y, global_config(VectorXd::Constant(1, R_val)));
    CHECK(out.particles(0, 0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(out.particles(1, 0) == doctest::Approx(0.5));
  }
}

TEST_CASE("large-ensemble assimilation tracks the Kalman posterior mean") {
  // Linear-Gaussian check: prior N(mu0, s0^2), observation y with variance R.
  const double mu0 = 0.4, s0 = 1.1, R_val = 0.7, y_val = 1.6;
  const double kalman =
      (mu0 / (s0 * s0) + y_val / R_val) / (1.0 / (s0 * s0) + 1.0 / R_val);

  const int reps = 30, n = 4000;
  std::vector<double> estimates;
  std::mt19937 gen(55);
  std::normal_distribution<double> normal;
  for (int rep = 0; rep < reps; ++rep) {
    MatrixXd particles(n, 1);
    for (int i = 0; i < n; ++i) particles(i, 0) = mu0 + s0 * normal(gen);
    filter::Ensemble ens = filter::Ensemble::uniform(std::move(particles));
    const auto out = filter::etpf_assimilate(ens, VectorXd::Constant(1, y_val),
                                             localised_config(VectorXd::Constant(1, R_val)));
    estimates.push_back(out.particles.col(0).mean());
  }
  double mean = 0.0;
  for (const double e : estimates) mean += e;
  mean /= reps;
  double var = 0.0;
  for (const double e : estimates) var += (e - mean) * (e - mean);
  var /= (reps - 1);
  const double se = std::sqrt(var / reps);
  CHECK(std::abs(mean - kalman) < 3.0 * se + 1e-12);
}
