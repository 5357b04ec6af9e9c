#include "mletpf/multilevel.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <stdexcept>
#include <thread>

#include "mletpf/errors.hpp"
#include "mletpf/rng.hpp"
#include "mletpf/transport.hpp"

namespace mletpf::multilevel {

namespace {

// ceil() with a snap window so values that are integers up to log/pow
// rounding do not get bumped a whole level.
int ceil_snapped(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) < 1e-9) return static_cast<int>(r);
  return static_cast<int>(std::ceil(x));
}

int steps_per_observation(double dt, double h) {
  const double ratio = dt / h;
  const int steps = static_cast<int>(std::llround(ratio));
  if (steps < 1 || std::abs(ratio - steps) > 1e-9) {
    throw std::invalid_argument(
        "observation spacing is not an integer multiple of the level step");
  }
  return steps;
}

Eigen::MatrixXd draw_initial(int n, const Eigen::VectorXd& mean, double stddev,
                             const rng::StreamKey& key) {
  Eigen::MatrixXd particles(n, mean.size());
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < mean.size(); ++c) {
      particles(i, c) =
          mean[c] + stddev * rng::gaussian(key, rng::Draw::Init,
                                           static_cast<std::uint32_t>(i), 0,
                                           static_cast<std::uint32_t>(c));
    }
  }
  return particles;
}

double ensemble_variance_trace(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 2) return std::numeric_limits<double>::quiet_NaN();
  return metrics::variance_trace_estimate(samples);
}

}  // namespace

int level_count(double epsilon, double alpha, int M, double t_end, int d) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("level_count: epsilon must be > 0");
  if (!(alpha > 0.0)) throw std::invalid_argument("level_count: alpha must be > 0");
  if (M < 2) throw std::invalid_argument("level_count: M must be >= 2");
  const double value =
      std::log(std::pow(t_end, alpha) * d / epsilon) / (alpha * std::log(M));
  return std::max(0, ceil_snapped(value));
}

std::vector<int> sample_schedule(int N0, int M, int L, double exponent) {
  if (N0 < 1) throw std::invalid_argument("sample_schedule: N0 must be >= 1");
  std::vector<int> schedule(L + 1);
  schedule[0] = N0;
  const double factor = std::pow(static_cast<double>(M), -exponent);
  for (int l = 1; l <= L; ++l) {
    schedule[l] = std::max(1, ceil_snapped(schedule[l - 1] * factor));
  }
  return schedule;
}

void multilevel_couple(filter::Ensemble& fine, filter::Ensemble& coarse,
                       const filter::FilterConfig& cfg, metrics::CostLedger* ledger) {
  const int n = fine.size();
  const int d = fine.dim();
  if (coarse.size() != n || coarse.dim() != d) {
    throw std::invalid_argument("multilevel_couple: ensemble size mismatch");
  }

  if (cfg.mode == filter::TransformMode::GlobalMultivariate) {
    const Eigen::VectorXd sq_f = fine.particles.rowwise().squaredNorm();
    const Eigen::VectorXd sq_c = coarse.particles.rowwise().squaredNorm();
    Eigen::MatrixXd cost = sq_f.replicate(1, n) + sq_c.transpose().replicate(n, 1) -
                           2.0 * fine.particles * coarse.particles.transpose();
    cost = cost.cwiseMax(0.0);
    const auto sigma = transport::assignment_coupling(cost, ledger);
    Eigen::MatrixXd reordered(n, d);
    for (int j = 0; j < n; ++j) reordered.row(sigma[j]) = coarse.particles.row(j);
    coarse.particles = std::move(reordered);
    if (ledger) ledger->transform_ops += static_cast<std::uint64_t>(n);
    return;
  }

  if (cfg.r_loc_c == 0.0) {
    // Uniform weights make the per-component monotone coupling a
    // sorted-to-sorted pairing: the b-th smallest coarse value moves to the
    // slot holding the b-th smallest fine value.
    for (int m = 0; m < d; ++m) {
      const auto order_f = filter::sorted_order(fine.particles.col(m), ledger);
      const auto order_c = filter::sorted_order(coarse.particles.col(m), ledger);
      Eigen::VectorXd col(n);
      for (int b = 0; b < n; ++b) col[order_f[b]] = coarse.particles(order_c[b], m);
      coarse.particles.col(m) = col;
    }
    if (ledger) ledger->transform_ops += static_cast<std::uint64_t>(n) * d;
    return;
  }

  // r_loc_c > 0: one assignment per component on the tapered cross cost.
  const auto C = transport::localisation_matrix(d, cfg.r_loc_c);
  for (int m = 0; m < d; ++m) {
    const Eigen::MatrixXd cost =
        transport::localised_cross_cost(fine.particles, coarse.particles, m, C);
    const auto sigma = transport::assignment_coupling(cost, ledger);
    Eigen::VectorXd col(n);
    for (int j = 0; j < n; ++j) col[sigma[j]] = coarse.particles(j, m);
    coarse.particles.col(m) = col;
  }
  if (ledger) ledger->transform_ops += static_cast<std::uint64_t>(n) * d;
}

void mletpf_assimilate(LevelPair& pair, const Eigen::VectorXd& y,
                       const filter::FilterConfig& cfg, metrics::CostLedger* ledger) {
  const auto w_fine = filter::update_weights(pair.fine, y, cfg, ledger);
  const auto w_coarse = filter::update_weights(pair.coarse, y, cfg, ledger);
  pair.fine = filter::transform_ensemble(pair.fine, w_fine, cfg, ledger);
  pair.coarse = filter::transform_ensemble(pair.coarse, w_coarse, cfg, ledger);
  multilevel_couple(pair.fine, pair.coarse, cfg, ledger);
}

Eigen::VectorXd combine_estimates(const std::vector<Eigen::VectorXd>& level_means) {
  if (level_means.empty()) {
    throw std::invalid_argument("combine_estimates: no level means");
  }
  Eigen::VectorXd sum = level_means[0];
  for (std::size_t l = 1; l < level_means.size(); ++l) sum += level_means[l];
  return sum;
}

namespace {

// Level-0 estimator and the single-level ETPF share this loop so the
// degenerate L=0 telescope is bit-identical to the plain filter.
LevelDiagnostics run_single_ensemble(const models::ModelSpec& model,
                                     const models::ObservationStream& obs, int N,
                                     int level, std::uint32_t stream,
                                     const MultilevelConfig& cfg, std::uint64_t seed) {
  const double h = cfg.h0 * std::pow(static_cast<double>(cfg.M), -level);
  const int steps = steps_per_observation(obs.dt, h);
  const auto n_obs = obs.times.size();

  LevelDiagnostics diag;
  diag.level = level;
  diag.samples = N;
  diag.term_means.resize(n_obs, model.dim);
  diag.var_trace.resize(n_obs);

  const rng::StreamKey key{seed, stream};
  filter::Ensemble ens =
      filter::Ensemble::uniform(draw_initial(N, cfg.init_mean, cfg.init_std, key), level);
  for (Eigen::Index k = 0; k < n_obs; ++k) {
    models::propagate_particles(ens.particles, model, h, level, k * steps, steps, key,
                                &diag.ledger);
    ens.time = obs.times[k];
    ens = filter::etpf_assimilate(ens, obs.values.row(k), cfg.filter, &diag.ledger);
    diag.term_means.row(k) = filter::posterior_mean(ens);
    diag.var_trace[k] = ensemble_variance_trace(ens.particles);
    diag.cumulative.push_back(diag.ledger);
  }
  return diag;
}

LevelDiagnostics run_pair_level(const models::ModelSpec& model,
                                const models::ObservationStream& obs, int N, int level,
                                const MultilevelConfig& cfg, std::uint64_t seed) {
  const double h_fine = cfg.h0 * std::pow(static_cast<double>(cfg.M), -level);
  const int fine_steps = steps_per_observation(obs.dt, h_fine);
  if (fine_steps % cfg.M != 0) {
    throw std::invalid_argument("run_mletpf: fine steps per observation not divisible by M");
  }
  const auto n_obs = obs.times.size();

  LevelDiagnostics diag;
  diag.level = level;
  diag.samples = N;
  diag.term_means.resize(n_obs, model.dim);
  diag.var_trace.resize(n_obs);

  const rng::StreamKey key{seed, static_cast<std::uint32_t>(level)};
  LevelPair pair;
  pair.level = level;
  pair.fine =
      filter::Ensemble::uniform(draw_initial(N, cfg.init_mean, cfg.init_std, key), level);
  pair.coarse = pair.fine;  // identical initial draws
  pair.coarse.level = level - 1;

  for (Eigen::Index k = 0; k < n_obs; ++k) {
    models::propagate_coupled(pair.fine.particles, pair.coarse.particles, model, h_fine,
                              cfg.M, level, k * fine_steps, fine_steps, key,
                              &diag.ledger);
    pair.fine.time = pair.coarse.time = obs.times[k];
    mletpf_assimilate(pair, obs.values.row(k), cfg.filter, &diag.ledger);
    const Eigen::MatrixXd diff = pair.fine.particles - pair.coarse.particles;
    diag.term_means.row(k) = diff.colwise().mean();
    diag.var_trace[k] = ensemble_variance_trace(diff);
    diag.cumulative.push_back(diag.ledger);
  }
  return diag;
}

}  // namespace

MultilevelRun run_mletpf(const models::ModelSpec& model,
                         const models::ObservationStream& obs,
                         const MultilevelConfig& cfg, std::uint64_t seed, int threads) {
  if (obs.dt < cfg.h0 - 1e-12) {
    throw std::invalid_argument("run_mletpf: observation spacing below h0");
  }
  if (cfg.init_mean.size() != model.dim) {
    throw std::invalid_argument("run_mletpf: init mean dimension mismatch");
  }
  steps_per_observation(obs.dt, cfg.h0);

  MultilevelRun run;
  run.schedule = sample_schedule(cfg.N0, cfg.M, cfg.L, cfg.schedule_exponent);
  run.levels.resize(cfg.L + 1);

  std::vector<std::exception_ptr> errors(cfg.L + 1);
  std::atomic<int> next{0};
  auto worker = [&]() {
    while (true) {
      const int l = next.fetch_add(1);
      if (l > cfg.L) break;
      try {
        run.levels[l] = (l == 0)
                            ? run_single_ensemble(model, obs, run.schedule[0], 0, 0, cfg,
                                                  seed)
                            : run_pair_level(model, obs, run.schedule[l], l, cfg, seed);
      } catch (...) {
        errors[l] = std::current_exception();
      }
    }
  };

  const int pool = std::max(1, std::min(threads, cfg.L + 1));
  if (pool == 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    pool_threads.reserve(pool);
    for (int t = 0; t < pool; ++t) pool_threads.emplace_back(worker);
    for (auto& t : pool_threads) t.join();
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  run.estimates.setZero(obs.times.size(), model.dim);
  for (const auto& level : run.levels) {
    run.estimates += level.term_means;
    run.ledger += level.ledger;
  }
  return run;
}

SingleLevelRun run_etpf(const models::ModelSpec& model,
                        const models::ObservationStream& obs, int N, int level,
                        const MultilevelConfig& cfg, std::uint64_t seed) {
  auto diag = run_single_ensemble(model, obs, N, level,
                                  static_cast<std::uint32_t>(level), cfg, seed);
  SingleLevelRun run;
  run.estimates = std::move(diag.term_means);
  run.level = level;
  run.samples = N;
  run.ledger = diag.ledger;
  return run;
}

}  // namespace mletpf::multilevel
