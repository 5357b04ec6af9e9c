#include "mletpf/models.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mletpf/errors.hpp"

namespace mletpf::models {

namespace {

// Stream id for the reference/truth path; level streams are small integers.
constexpr std::uint32_t kReferenceStream = 1u << 20;

void check_finite(const Eigen::VectorXd& x, int level, double time) {
  if (!x.allFinite()) {
    throw FilterError(FilterError::Kind::Divergence,
                      "propagation diverged at level " + std::to_string(level) +
                          ", time " + std::to_string(time),
                      level, time);
  }
}

}  // namespace

double drift_double_well(double x) { return x - x * x * x; }

Eigen::Vector3d drift_lorenz63(const Eigen::Vector3d& s, double rho, double sigma,
                               double beta) {
  return {sigma * (s[1] - s[0]), s[0] * (rho - s[2]) - s[1],
          s[0] * s[1] - beta * s[2]};
}

Eigen::VectorXd drift_lorenz96(const Eigen::VectorXd& x, double forcing, double dx) {
  const int d = static_cast<int>(x.size());
  if (d < 4) throw std::invalid_argument("drift_lorenz96: state length must be >= 4");
  Eigen::VectorXd out(d);
  const double inv = 1.0 / (3.0 * dx);
  for (int j = 0; j < d; ++j) {
    const double xm1 = x[(j - 1 + d) % d];
    const double xp1 = x[(j + 1) % d];
    const double xm2 = x[(j - 2 + d) % d];
    out[j] = -(xm1 * xp1 - xm2 * xm1) * inv - x[j] + forcing;
  }
  return out;
}

ModelSpec double_well_model(double xi) {
  ModelSpec spec;
  spec.name = "double_well";
  spec.dim = 1;
  spec.diffusion_scale = xi;
  spec.noise_mode = NoiseMode::PerComponent;
  spec.drift = [](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    out[0] = drift_double_well(x[0]);
  };
  return spec;
}

ModelSpec lorenz63_model(double phi) {
  ModelSpec spec;
  spec.name = "lorenz63";
  spec.dim = 3;
  spec.diffusion_scale = phi;
  // One Brownian path shared by all three components keeps the strong
  // nonlinearity of the system.
  spec.noise_mode = NoiseMode::SharedScalar;
  spec.drift = [](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    out = drift_lorenz63(x.head<3>());
  };
  return spec;
}

ModelSpec lorenz96_model(int dim, double forcing, double dx, double noise) {
  ModelSpec spec;
  spec.name = "lorenz96";
  spec.dim = dim;
  spec.diffusion_scale = noise;
  spec.noise_mode = NoiseMode::PerComponent;
  spec.drift = [forcing, dx](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    out = drift_lorenz96(x, forcing, dx);
  };
  return spec;
}

Eigen::VectorXd euler_maruyama_step(const Eigen::VectorXd& x, const ModelSpec& model,
                                    double h, const Eigen::VectorXd& dW) {
  if (h <= 0.0) throw std::invalid_argument("euler_maruyama_step: h must be positive");
  if (dW.size() != model.noise_channels()) {
    throw std::invalid_argument("euler_maruyama_step: wrong noise channel count");
  }
  Eigen::VectorXd f(model.dim);
  model.drift(x, f);
  Eigen::VectorXd out = x + h * f;
  if (model.noise_mode == NoiseMode::SharedScalar) {
    out.array() += model.diffusion_scale * dW[0];
  } else {
    out += model.diffusion_scale * dW;
  }
  check_finite(out, -1, h);
  return out;
}

BrownianIncrements sample_increments(const rng::StreamKey& key, std::uint32_t particle,
                                     int level, double h, std::int64_t step0,
                                     int n_steps, int channels) {
  BrownianIncrements inc;
  inc.level = level;
  inc.h = h;
  inc.increments.resize(n_steps, channels);
  const double scale = std::sqrt(h);
  for (int s = 0; s < n_steps; ++s) {
    for (int c = 0; c < channels; ++c) {
      inc.increments(s, c) =
          scale * rng::gaussian(key, rng::Draw::Noise, particle,
                                static_cast<std::uint64_t>(step0 + s),
                                static_cast<std::uint32_t>(c));
    }
  }
  return inc;
}

BrownianIncrements coarsen_increments(const BrownianIncrements& fine, int M) {
  if (M < 1 || fine.increments.rows() % M != 0) {
    throw std::invalid_argument("coarsen_increments: step count not a multiple of M");
  }
  BrownianIncrements coarse;
  coarse.level = fine.level - 1;
  coarse.h = fine.h * M;
  const int n_coarse = static_cast<int>(fine.increments.rows()) / M;
  coarse.increments.setZero(n_coarse, fine.increments.cols());
  for (int s = 0; s < n_coarse; ++s) {
    for (int k = 0; k < M; ++k) {
      coarse.increments.row(s) += fine.increments.row(s * M + k);
    }
  }
  return coarse;
}

namespace {

// Hot path shared by both propagators; steps one particle through a window
// of precomputed increments. `window_end` is only for divergence reporting.
void advance(Eigen::VectorXd& x, Eigen::VectorXd& f, const ModelSpec& model, double h,
             const Eigen::MatrixXd& increments, int level, double scale,
             bool shared_noise, double window_end) {
  const int n_steps = static_cast<int>(increments.rows());
  for (int s = 0; s < n_steps; ++s) {
    model.drift(x, f);
    if (shared_noise) {
      x += h * f;
      x.array() += scale * increments(s, 0);
    } else {
      x += h * f + scale * increments.row(s).transpose();
    }
  }
  check_finite(x, level, window_end);
}

}  // namespace

void propagate_particles(Eigen::MatrixXd& particles, const ModelSpec& model, double h,
                         int level, std::int64_t step0, int n_steps,
                         const rng::StreamKey& key, metrics::CostLedger* ledger) {
  const int channels = model.noise_channels();
  const bool shared = model.noise_mode == NoiseMode::SharedScalar;
  Eigen::VectorXd x(model.dim), f(model.dim);
  for (Eigen::Index i = 0; i < particles.rows(); ++i) {
    const auto inc = sample_increments(key, static_cast<std::uint32_t>(i), level, h,
                                       step0, n_steps, channels);
    x = particles.row(i);
    advance(x, f, model, h, inc.increments, level, model.diffusion_scale, shared,
            (step0 + n_steps) * h);
    particles.row(i) = x;
  }
  if (ledger) {
    ledger->model_ops += static_cast<std::uint64_t>(particles.rows()) * n_steps *
                         static_cast<std::uint64_t>(model.dim);
  }
}

void propagate_coupled(Eigen::MatrixXd& fine, Eigen::MatrixXd& coarse,
                       const ModelSpec& model, double h_fine, int M, int level,
                       std::int64_t fine_step0, int n_fine_steps,
                       const rng::StreamKey& key, metrics::CostLedger* ledger) {
  if (fine.rows() != coarse.rows()) {
    throw std::invalid_argument("propagate_coupled: ensemble size mismatch");
  }
  if (n_fine_steps % M != 0) {
    throw std::invalid_argument("propagate_coupled: window not a multiple of the coarse step");
  }
  const int channels = model.noise_channels();
  const bool shared = model.noise_mode == NoiseMode::SharedScalar;
  Eigen::VectorXd x(model.dim), f(model.dim);
  for (Eigen::Index i = 0; i < fine.rows(); ++i) {
    const auto inc_fine = sample_increments(key, static_cast<std::uint32_t>(i), level,
                                            h_fine, fine_step0, n_fine_steps, channels);
    const auto inc_coarse = coarsen_increments(inc_fine, M);
    const double window_end = (fine_step0 + n_fine_steps) * h_fine;
    x = fine.row(i);
    advance(x, f, model, h_fine, inc_fine.increments, level, model.diffusion_scale,
            shared, window_end);
    fine.row(i) = x;
    x = coarse.row(i);
    advance(x, f, model, M * h_fine, inc_coarse.increments, level - 1,
            model.diffusion_scale, shared, window_end);
    coarse.row(i) = x;
  }
  if (ledger) {
    const std::uint64_t per_particle =
        static_cast<std::uint64_t>(n_fine_steps) + n_fine_steps / M;
    ledger->model_ops += static_cast<std::uint64_t>(fine.rows()) * per_particle *
                         static_cast<std::uint64_t>(model.dim);
  }
}

TwinExperiment synthesize_observations(const ModelSpec& model,
                                       const Eigen::VectorXd& R_diag, double dt,
                                       double t_end, int ref_level, double h0, int M,
                                       std::uint64_t seed, const Eigen::VectorXd& x0) {
  if (dt < h0 - 1e-12) {
    throw std::invalid_argument("synthesize_observations: dt must be >= h0");
  }
  if (R_diag.size() != model.dim || x0.size() != model.dim) {
    throw std::invalid_argument("synthesize_observations: dimension mismatch");
  }
  const double h_ref = h0 * std::pow(static_cast<double>(M), -ref_level);
  const double steps_per_obs_real = dt / h_ref;
  const int steps_per_obs = static_cast<int>(std::llround(steps_per_obs_real));
  if (std::abs(steps_per_obs_real - steps_per_obs) > 1e-9) {
    throw std::invalid_argument(
        "synthesize_observations: dt is not an integer multiple of the reference step");
  }
  const int n_obs = static_cast<int>(std::llround(t_end / dt));

  TwinExperiment twin;
  twin.ref_level = ref_level;
  twin.initial_state = x0;
  twin.stream.seed = seed;
  twin.stream.dt = dt;
  twin.stream.noise_diag = R_diag;
  twin.stream.times.resize(n_obs);
  twin.stream.values.resize(n_obs, model.dim);
  twin.reference.resize(n_obs, model.dim);

  const rng::StreamKey key{seed, kReferenceStream};
  Eigen::MatrixXd state(1, model.dim);
  state.row(0) = x0;
  for (int k = 0; k < n_obs; ++k) {
    propagate_particles(state, model, h_ref, ref_level,
                        static_cast<std::int64_t>(k) * steps_per_obs, steps_per_obs,
                        key);
    twin.stream.times[k] = (k + 1) * dt;
    twin.reference.row(k) = state.row(0);
    for (int c = 0; c < model.dim; ++c) {
      twin.stream.values(k, c) =
          state(0, c) + std::sqrt(R_diag[c]) *
                            rng::gaussian(key, rng::Draw::ObsNoise, 0,
                                          static_cast<std::uint64_t>(k),
                                          static_cast<std::uint32_t>(c));
    }
  }
  return twin;
}

void write_trajectory_csv(const std::string& path, const Eigen::VectorXd& times,
                          const Eigen::MatrixXd& reference, const Eigen::MatrixXd* obs,
                          const std::string& header_comment) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trajectory_csv: cannot open " + path);
  out.precision(17);
  if (!header_comment.empty()) out << "# " << header_comment << "\n";
  out << "t";
  for (Eigen::Index c = 0; c < reference.cols(); ++c) out << ",x_" << (c + 1);
  if (obs) {
    for (Eigen::Index c = 0; c < obs->cols(); ++c) out << ",y_" << (c + 1);
  }
  out << "\n";
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    out << times[k];
    for (Eigen::Index c = 0; c < reference.cols(); ++c) out << "," << reference(k, c);
    if (obs) {
      for (Eigen::Index c = 0; c < obs->cols(); ++c) out << "," << (*obs)(k, c);
    }
    out << "\n";
  }
}

}  // namespace mletpf::models
