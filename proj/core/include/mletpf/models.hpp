#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>

#include "mletpf/cost_ledger.hpp"
#include "mletpf/rng.hpp"

namespace mletpf::models {

enum class NoiseMode {
  SharedScalar,   // one Brownian path broadcast to every component
  PerComponent,   // independent Brownian path per component
};

/// Drift/diffusion definition of one stochastic test system.
struct ModelSpec {
  std::string name;
  int dim = 1;
  double diffusion_scale = 0.0;
  NoiseMode noise_mode = NoiseMode::PerComponent;
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)> drift;

  int noise_channels() const { return noise_mode == NoiseMode::SharedScalar ? 1 : dim; }
};

/// -V'(x) for the double-well potential V(x) = x^4/4 - x^2/2.
double drift_double_well(double x);

Eigen::Vector3d drift_lorenz63(const Eigen::Vector3d& state, double rho = 28.0,
                               double sigma = 10.0, double beta = 8.0 / 3.0);

/// Advective Lorenz-96 form with periodic wrap:
/// component j = -(X(j-1)X(j+1) - X(j-2)X(j-1)) / (3 dx) - X(j) + forcing.
Eigen::VectorXd drift_lorenz96(const Eigen::VectorXd& state, double forcing = 8.0,
                               double dx = 0.25);

ModelSpec double_well_model(double xi = 0.5);
ModelSpec lorenz63_model(double phi = 0.4);
ModelSpec lorenz96_model(int dim = 40, double forcing = 8.0, double dx = 0.25,
                         double noise = 0.4);

/// x + h f(x) + diffusion_scale * dW. Shared-scalar mode broadcasts dW[0].
/// Throws FilterError(Divergence) on non-finite output.
Eigen::VectorXd euler_maruyama_step(const Eigen::VectorXd& x, const ModelSpec& model,
                                    double h, const Eigen::VectorXd& dW);

/// Brownian increments for one particle over a window of steps.
/// Each increment ~ N(0, h); coarsening sums M consecutive fine increments
/// exactly, never re-samples.
struct BrownianIncrements {
  int level = 0;
  double h = 0.0;
  Eigen::MatrixXd increments;  // n_steps x channels
};

BrownianIncrements sample_increments(const rng::StreamKey& key, std::uint32_t particle,
                                     int level, double h, std::int64_t step0,
                                     int n_steps, int channels);

BrownianIncrements coarsen_increments(const BrownianIncrements& fine, int M);

/// Advance every row of `particles` by n_steps of size h. Noise draws are
/// keyed by (stream, particle row, global step index, channel), so chunked
/// propagation reproduces one long run bit for bit.
void propagate_particles(Eigen::MatrixXd& particles, const ModelSpec& model, double h,
                         int level, std::int64_t step0, int n_steps,
                         const rng::StreamKey& key, metrics::CostLedger* ledger = nullptr);

/// Advance a coupled fine/coarse pair over the same window. Fine rows take
/// n_fine_steps of size h_fine; coarse rows take n_fine_steps/M steps of size
/// M*h_fine whose increments are the exact sums of the corresponding fine
/// increments.
void propagate_coupled(Eigen::MatrixXd& fine, Eigen::MatrixXd& coarse,
                       const ModelSpec& model, double h_fine, int M, int level,
                       std::int64_t fine_step0, int n_fine_steps,
                       const rng::StreamKey& key, metrics::CostLedger* ledger = nullptr);

struct ObservationStream {
  Eigen::VectorXd times;       // t_1 .. t_Ny, constant spacing dt
  Eigen::MatrixXd values;      // Ny x d
  Eigen::VectorXd noise_diag;  // diagonal of R
  std::uint64_t seed = 0;
  double dt = 0.0;
};

/// Observation stream plus the reference trajectory it was cut from.
struct TwinExperiment {
  ObservationStream stream;
  Eigen::MatrixXd reference;  // Ny x d, reference path at assimilation times
  Eigen::VectorXd initial_state;
  int ref_level = 0;
};

/// Simulates one reference path at ref_level (step h0 M^-ref_level) from a
/// fixed seed and emits Y_k = X'(t_k) + N(0, R). Fully reproducible.
TwinExperiment synthesize_observations(const ModelSpec& model,
                                       const Eigen::VectorXd& R_diag, double dt,
                                       double t_end, int ref_level, double h0, int M,
                                       std::uint64_t seed, const Eigen::VectorXd& x0);

/// One row per time: t, x_1..x_d and, when obs is non-null, y_1..y_d.
void write_trajectory_csv(const std::string& path, const Eigen::VectorXd& times,
                          const Eigen::MatrixXd& reference,
                          const Eigen::MatrixXd* obs = nullptr,
                          const std::string& header_comment = "");

}  // namespace mletpf::models
