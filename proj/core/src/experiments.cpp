#include "mletpf/experiments.hpp"

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "mletpf/transport.hpp"

namespace mletpf::experiments {

namespace {

using nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

int ceil_snapped(double x) {
  const double r = std::round(x);
  if (std::abs(x - r) < 1e-9) return static_cast<int>(r);
  return static_cast<int>(std::ceil(x));
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << v;
  return out.str();
}

// --- config parsing -------------------------------------------------------

struct Validator {
  std::vector<std::string> errors;

  void fail(const std::string& field, const std::string& why) {
    errors.push_back(field + ": " + why);
  }

  void check_known(const json& obj, const std::string& section,
                   std::initializer_list<const char*> keys) {
    for (const auto& [key, value] : obj.items()) {
      bool known = false;
      for (const char* k : keys) {
        if (key == k) {
          known = true;
          break;
        }
      }
      if (!known) fail(section + "." + key, "unknown field");
    }
  }

  double number(const json& obj, const std::string& section, const char* key,
                bool required, double fallback = 0.0) {
    if (!obj.contains(key)) {
      if (required) fail(section + "." + key, "missing required field");
      return fallback;
    }
    if (!obj[key].is_number()) {
      fail(section + "." + key, "expected a number");
      return fallback;
    }
    return obj[key].get<double>();
  }

  std::int64_t integer(const json& obj, const std::string& section, const char* key,
                       bool required, std::int64_t fallback = 0) {
    if (!obj.contains(key)) {
      if (required) fail(section + "." + key, "missing required field");
      return fallback;
    }
    if (!obj[key].is_number_integer()) {
      fail(section + "." + key, "expected an integer");
      return fallback;
    }
    return obj[key].get<std::int64_t>();
  }

  std::string text(const json& obj, const std::string& section, const char* key,
                   bool required, const std::string& fallback = "") {
    if (!obj.contains(key)) {
      if (required) fail(section + "." + key, "missing required field");
      return fallback;
    }
    if (!obj[key].is_string()) {
      fail(section + "." + key, "expected a string");
      return fallback;
    }
    return obj[key].get<std::string>();
  }

  Eigen::VectorXd vector(const json& obj, const std::string& section, const char* key,
                         bool required) {
    if (!obj.contains(key)) {
      if (required) fail(section + "." + key, "missing required field");
      return {};
    }
    if (!obj[key].is_array()) {
      fail(section + "." + key, "expected an array of numbers");
      return {};
    }
    Eigen::VectorXd v(obj[key].size());
    for (std::size_t i = 0; i < obj[key].size(); ++i) {
      if (!obj[key][i].is_number()) {
        fail(section + "." + key, "expected an array of numbers");
        return {};
      }
      v[static_cast<Eigen::Index>(i)] = obj[key][i].get<double>();
    }
    return v;
  }
};

json section(Validator& v, const json& root, const char* name, bool required) {
  if (!root.contains(name)) {
    if (required) v.fail(name, "missing required section");
    return json::object();
  }
  if (!root[name].is_object()) {
    v.fail(name, "expected an object");
    return json::object();
  }
  return root[name];
}

}  // namespace

models::ModelSpec ExperimentConfig::make_model() const {
  if (model_type == "double_well") return models::double_well_model(dw_xi);
  if (model_type == "lorenz63") return models::lorenz63_model(l63_phi);
  if (model_type == "lorenz96") {
    return models::lorenz96_model(l96_dim, l96_forcing, l96_dx, l96_noise);
  }
  throw std::invalid_argument("model.type: unknown model '" + model_type + "'");
}

int ExperimentConfig::dim() const {
  if (model_type == "double_well") return 1;
  if (model_type == "lorenz63") return 3;
  return l96_dim;
}

multilevel::MultilevelConfig ExperimentConfig::make_multilevel(int L_override,
                                                               int N0_override) const {
  multilevel::MultilevelConfig cfg;
  cfg.M = M;
  cfg.h0 = h0;
  cfg.L = L_override >= 0 ? L_override : L;
  cfg.N0 = N0_override >= 0 ? N0_override : N0;
  cfg.schedule_exponent = schedule_exponent;
  cfg.alpha = alpha;
  cfg.filter = filter;
  cfg.init_mean = init_mean;
  cfg.init_std = init_std;
  return cfg;
}

std::string ExperimentConfig::canonical_json() const {
  json j;
  j["name"] = name;
  j["model"]["type"] = model_type;
  if (model_type == "double_well") j["model"]["xi"] = dw_xi;
  if (model_type == "lorenz63") j["model"]["phi"] = l63_phi;
  if (model_type == "lorenz96") {
    j["model"]["dim"] = l96_dim;
    j["model"]["forcing"] = l96_forcing;
    j["model"]["dx"] = l96_dx;
    j["model"]["noise"] = l96_noise;
  }
  j["observations"]["R"] = std::vector<double>(R_diag.begin(), R_diag.end());
  j["observations"]["dt"] = dt;
  j["observations"]["t_end"] = t_end;
  j["observations"]["seed"] = obs_seed;
  j["observations"]["ref_level_offset"] = ref_level_offset;
  j["observations"]["ref_init"] = std::vector<double>(ref_init.begin(), ref_init.end());
  j["filter"]["transform_mode"] =
      filter.mode == filter::TransformMode::GlobalMultivariate ? "global" : "localised";
  j["filter"]["r_loc_c"] = filter.r_loc_c;
  if (std::isinf(filter.r_loc_R)) {
    j["filter"]["r_loc_R"] = "inf";
  } else {
    j["filter"]["r_loc_R"] = filter.r_loc_R;
  }
  j["multilevel"]["M"] = M;
  j["multilevel"]["h0"] = h0;
  j["multilevel"]["L"] = L;
  j["multilevel"]["N0"] = N0;
  j["multilevel"]["schedule_exponent"] = schedule_exponent;
  j["multilevel"]["alpha"] = alpha;
  j["init"]["mean"] = std::vector<double>(init_mean.begin(), init_mean.end());
  j["init"]["std"] = init_std;
  j["epsilons"] = epsilons;
  j["truth"]["N_factor"] = truth_N_factor;
  j["truth"]["L_offset"] = truth_L_offset;
  j["seed"] = seed;
  return j.dump();
}

std::string ExperimentConfig::hash_hex() const { return to_hex(fnv1a(canonical_json())); }

ExperimentConfig load_experiment_config(const std::string& path, bool desk_scale) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + std::string(e.what()));
  }

  Validator v;
  if (desk_scale) {
    if (!root.contains("desk_scale")) {
      v.fail("desk_scale", "missing section but --desk-scale requested");
    } else {
      json overrides = root["desk_scale"];
      root.erase("desk_scale");
      root.merge_patch(overrides);
    }
  } else {
    root.erase("desk_scale");
  }

  v.check_known(root, "(root)",
                {"name", "model", "observations", "filter", "multilevel", "init",
                 "epsilons", "truth", "seed"});

  ExperimentConfig cfg;
  cfg.name = v.text(root, "(root)", "name", true);
  cfg.seed = static_cast<std::uint64_t>(v.integer(root, "(root)", "seed", false, 0));

  const json model = section(v, root, "model", true);
  cfg.model_type = v.text(model, "model", "type", true);
  if (cfg.model_type == "double_well") {
    v.check_known(model, "model", {"type", "xi"});
    cfg.dw_xi = v.number(model, "model", "xi", false, 0.5);
  } else if (cfg.model_type == "lorenz63") {
    v.check_known(model, "model", {"type", "phi"});
    cfg.l63_phi = v.number(model, "model", "phi", false, 0.4);
  } else if (cfg.model_type == "lorenz96") {
    v.check_known(model, "model", {"type", "dim", "forcing", "dx", "noise"});
    cfg.l96_dim = static_cast<int>(v.integer(model, "model", "dim", false, 40));
    cfg.l96_forcing = v.number(model, "model", "forcing", false, 8.0);
    cfg.l96_dx = v.number(model, "model", "dx", false, 0.25);
    cfg.l96_noise = v.number(model, "model", "noise", false, 0.4);
  } else if (!cfg.model_type.empty()) {
    v.fail("model.type", "unknown model '" + cfg.model_type + "'");
  }
  const int d = cfg.model_type == "double_well"  ? 1
                : cfg.model_type == "lorenz63"   ? 3
                                                 : cfg.l96_dim;

  const json obs = section(v, root, "observations", true);
  v.check_known(obs, "observations",
                {"R", "dt", "t_end", "seed", "ref_level_offset", "ref_init"});
  if (obs.contains("R") && obs["R"].is_number()) {
    cfg.R_diag = Eigen::VectorXd::Constant(d, obs["R"].get<double>());
  } else {
    cfg.R_diag = v.vector(obs, "observations", "R", true);
    if (cfg.R_diag.size() != d && cfg.R_diag.size() > 0) {
      v.fail("observations.R", "length must match the state dimension");
    }
  }
  for (Eigen::Index i = 0; i < cfg.R_diag.size(); ++i) {
    if (!(cfg.R_diag[i] > 0.0)) v.fail("observations.R", "entries must be positive");
  }
  cfg.dt = v.number(obs, "observations", "dt", true);
  cfg.t_end = v.number(obs, "observations", "t_end", true);
  cfg.obs_seed = static_cast<std::uint64_t>(v.integer(obs, "observations", "seed", true));
  cfg.ref_level_offset =
      static_cast<int>(v.integer(obs, "observations", "ref_level_offset", false, 2));
  cfg.ref_init = v.vector(obs, "observations", "ref_init", true);
  if (cfg.ref_init.size() != d && cfg.ref_init.size() > 0) {
    v.fail("observations.ref_init", "length must match the state dimension");
  }

  const json flt = section(v, root, "filter", true);
  v.check_known(flt, "filter", {"transform_mode", "r_loc_c", "r_loc_R"});
  const std::string mode = v.text(flt, "filter", "transform_mode", true);
  if (mode == "global") {
    cfg.filter.mode = filter::TransformMode::GlobalMultivariate;
  } else if (mode == "localised") {
    cfg.filter.mode = filter::TransformMode::LocalisedPerComponent;
  } else if (!mode.empty()) {
    v.fail("filter.transform_mode", "expected 'global' or 'localised'");
  }
  cfg.filter.r_loc_c = v.number(flt, "filter", "r_loc_c", false, 0.0);
  if (cfg.filter.r_loc_c < 0.0) v.fail("filter.r_loc_c", "must be non-negative");
  if (flt.contains("r_loc_R") && flt["r_loc_R"].is_string()) {
    if (flt["r_loc_R"].get<std::string>() == "inf") {
      cfg.filter.r_loc_R = kInf;
    } else {
      v.fail("filter.r_loc_R", "expected a number or 'inf'");
    }
  } else {
    cfg.filter.r_loc_R = v.number(flt, "filter", "r_loc_R", false, kInf);
    if (cfg.filter.r_loc_R < 0.0) v.fail("filter.r_loc_R", "must be non-negative");
  }
  cfg.filter.R_diag = cfg.R_diag;

  const json ml = section(v, root, "multilevel", true);
  v.check_known(ml, "multilevel",
                {"M", "h0", "L", "N0", "epsilon", "schedule_exponent", "alpha"});
  cfg.M = static_cast<int>(v.integer(ml, "multilevel", "M", false, 2));
  if (cfg.M < 1) v.fail("multilevel.M", "must be >= 1");
  cfg.h0 = v.number(ml, "multilevel", "h0", true);
  if (cfg.h0 <= 0.0 && ml.contains("h0")) v.fail("multilevel.h0", "must be positive");
  cfg.schedule_exponent = v.number(ml, "multilevel", "schedule_exponent", false, 1.5);
  cfg.alpha = v.number(ml, "multilevel", "alpha", false, 1.0);
  if (ml.contains("epsilon")) {
    const double eps = v.number(ml, "multilevel", "epsilon", false, 0.0);
    if (!(eps > 0.0)) {
      v.fail("multilevel.epsilon", "must be positive");
    } else if (v.errors.empty()) {
      cfg.L = multilevel::level_count(eps, cfg.alpha, std::max(2, cfg.M), cfg.t_end, d);
      cfg.N0 = ceil_snapped(1.0 / (eps * eps));
    }
    if (ml.contains("L") || ml.contains("N0")) {
      v.fail("multilevel.epsilon", "give either epsilon or explicit (L, N0), not both");
    }
  } else {
    cfg.L = static_cast<int>(v.integer(ml, "multilevel", "L", true));
    cfg.N0 = static_cast<int>(v.integer(ml, "multilevel", "N0", true));
    if (cfg.L < 0) v.fail("multilevel.L", "must be >= 0");
    if (cfg.N0 < 1) v.fail("multilevel.N0", "must be >= 1");
  }

  const json init = section(v, root, "init", true);
  v.check_known(init, "init", {"mean", "std"});
  cfg.init_mean = v.vector(init, "init", "mean", true);
  if (cfg.init_mean.size() != d && cfg.init_mean.size() > 0) {
    v.fail("init.mean", "length must match the state dimension");
  }
  cfg.init_std = v.number(init, "init", "std", false, 1.0);
  if (cfg.init_std < 0.0) v.fail("init.std", "must be non-negative");

  if (root.contains("epsilons")) {
    if (!root["epsilons"].is_array()) {
      v.fail("epsilons", "expected an array of numbers");
    } else {
      for (const auto& e : root["epsilons"]) {
        if (!e.is_number() || !(e.get<double>() > 0.0)) {
          v.fail("epsilons", "entries must be positive numbers");
          break;
        }
        cfg.epsilons.push_back(e.get<double>());
      }
      for (std::size_t i = 1; i < cfg.epsilons.size(); ++i) {
        if (cfg.epsilons[i] >= cfg.epsilons[i - 1]) {
          v.fail("epsilons", "must be strictly descending");
          break;
        }
      }
    }
  }

  if (root.contains("truth")) {
    const json truth = section(v, root, "truth", false);
    v.check_known(truth, "truth", {"N_factor", "L_offset"});
    cfg.truth_N_factor = static_cast<int>(v.integer(truth, "truth", "N_factor", false, 16));
    cfg.truth_L_offset = static_cast<int>(v.integer(truth, "truth", "L_offset", false, 2));
    if (cfg.truth_N_factor < 1) v.fail("truth.N_factor", "must be >= 1");
  }

  if (!v.errors.empty()) {
    std::string msg = "config validation failed:";
    for (const auto& e : v.errors) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }
  return cfg;
}

double linear_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw std::invalid_argument("linear_slope: need at least two points");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}

// --- shared plumbing -------------------------------------------------------

namespace {

models::TwinExperiment make_observations(const ExperimentConfig& cfg, int ref_level) {
  return models::synthesize_observations(cfg.make_model(), cfg.R_diag, cfg.dt, cfg.t_end,
                                         ref_level, cfg.h0, std::max(2, cfg.M),
                                         cfg.obs_seed, cfg.ref_init);
}

std::ofstream open_csv(const std::filesystem::path& path, const ExperimentConfig& cfg,
                       std::uint64_t seed) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file " + path.string());
  out.precision(17);
  out << "# config_hash=" << cfg.hash_hex() << " seed=" << seed << "\n";
  return out;
}

void write_observations_csv(const std::filesystem::path& dir,
                            const ExperimentConfig& cfg, std::uint64_t seed,
                            const models::TwinExperiment& twin) {
  std::filesystem::create_directories(dir);
  models::write_trajectory_csv((dir / "observations.csv").string(), twin.stream.times,
                               twin.reference, &twin.stream.values,
                               "config_hash=" + cfg.hash_hex() + " seed=" +
                                   std::to_string(seed));
}

Eigen::MatrixXd read_estimates_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line[0] == 't') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error("empty estimates file " + path.string());
  Eigen::MatrixXd m(rows.size(), rows[0].size() - 1);  // first column is time
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 1; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c - 1)) = rows[r][c];
    }
  }
  return m;
}

void write_estimates_csv(const std::filesystem::path& path, const ExperimentConfig& cfg,
                         std::uint64_t seed, const Eigen::VectorXd& times,
                         const Eigen::MatrixXd& estimates) {
  auto out = open_csv(path, cfg, seed);
  out << "t";
  for (Eigen::Index c = 0; c < estimates.cols(); ++c) out << ",x_" << (c + 1);
  out << "\n";
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    out << times[k];
    for (Eigen::Index c = 0; c < estimates.cols(); ++c) out << "," << estimates(k, c);
    out << "\n";
  }
}

}  // namespace

// --- drivers ---------------------------------------------------------------

VarianceDecayResult variance_decay(const ExperimentConfig& cfg, std::uint64_t seed,
                                   int threads, const std::string& out_dir) {
  const auto model = cfg.make_model();
  const auto twin = make_observations(cfg, cfg.L + cfg.ref_level_offset);
  const auto ml = cfg.make_multilevel();

  VarianceDecayResult result;
  result.run = multilevel::run_mletpf(model, twin.stream, ml, seed, threads);

  std::vector<double> lv, log_var, log_diff;
  for (int l = 1; l <= cfg.L; ++l) {
    const auto& diag = result.run.levels[l];
    VarianceDecayRow row;
    row.level = l;
    row.mean_variance_trace = diag.var_trace.mean();
    row.mean_abs_difference = diag.term_means.cwiseAbs().rowwise().sum().mean();
    result.rows.push_back(row);
    if (row.mean_variance_trace > 0.0 && row.mean_abs_difference > 0.0) {
      lv.push_back(static_cast<double>(l));
      log_var.push_back(std::log2(row.mean_variance_trace));
      log_diff.push_back(std::log2(row.mean_abs_difference));
    }
  }
  if (lv.size() >= 2) {
    result.variance_slope = linear_slope(lv, log_var);
    result.difference_slope = linear_slope(lv, log_diff);
  }

  const std::filesystem::path dir(out_dir);
  write_observations_csv(dir, cfg, seed, twin);
  auto out = open_csv(dir / "variance_decay.csv", cfg, seed);
  out << "l,mean_tr_vhat,mean_abs_difference\n";
  for (const auto& row : result.rows) {
    out << row.level << "," << row.mean_variance_trace << ","
        << row.mean_abs_difference << "\n";
  }
  return result;
}

CostAccuracyResult cost_vs_accuracy(const ExperimentConfig& cfg, std::uint64_t seed,
                                    int threads, const std::string& out_dir) {
  if (cfg.epsilons.size() < 1) {
    throw std::invalid_argument("epsilons: required for cost-vs-accuracy");
  }
  const auto model = cfg.make_model();
  const double eps_min = cfg.epsilons.back();
  const int L_min_eps =
      multilevel::level_count(eps_min, cfg.alpha, std::max(2, cfg.M), cfg.t_end, cfg.dim());
  const int L_truth = L_min_eps + cfg.truth_L_offset;
  const auto twin = make_observations(cfg, L_truth + cfg.ref_level_offset);

  const std::filesystem::path dir(out_dir);
  write_observations_csv(dir, cfg, seed, twin);

  // Truth proxy: a high-accuracy single-level run shared by every epsilon,
  // cached on disk keyed by config hash and seed.
  const int N_truth = cfg.truth_N_factor * ceil_snapped(1.0 / (eps_min * eps_min));
  const auto truth_path =
      dir / ("truth_" + cfg.hash_hex() + "_" + std::to_string(seed) + ".csv");
  Eigen::MatrixXd truth;
  if (std::filesystem::exists(truth_path)) {
    truth = read_estimates_csv(truth_path);
  }
  if (truth.rows() != twin.stream.times.size() || truth.cols() != model.dim) {
    const auto run =
        multilevel::run_etpf(model, twin.stream, N_truth, L_truth, cfg.make_multilevel(), seed);
    truth = run.estimates;
    write_estimates_csv(truth_path, cfg, seed, twin.stream.times, truth);
  }

  CostAccuracyResult result;
  result.rows.resize(cfg.epsilons.size());
  std::vector<std::exception_ptr> errors(cfg.epsilons.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= cfg.epsilons.size()) break;
      try {
        const double eps = cfg.epsilons[idx];
        const int N = ceil_snapped(1.0 / (eps * eps));
        const int L_eps = multilevel::level_count(eps, cfg.alpha, std::max(2, cfg.M),
                                                  cfg.t_end, cfg.dim());
        CostAccuracyRow row;
        row.epsilon = eps;
        const auto ml_run = multilevel::run_mletpf(model, twin.stream,
                                                   cfg.make_multilevel(L_eps, N), seed, 1);
        row.rmse_mletpf = metrics::time_averaged_rmse(ml_run.estimates, truth);
        row.cost_mletpf = ml_run.ledger;
        const auto sl_run =
            multilevel::run_etpf(model, twin.stream, N, L_eps, cfg.make_multilevel(), seed);
        row.rmse_etpf = metrics::time_averaged_rmse(sl_run.estimates, truth);
        row.cost_etpf = sl_run.ledger;
        result.rows[idx] = row;
      } catch (...) {
        errors[idx] = std::current_exception();
      }
    }
  };
  const int pool = std::max(1, std::min<int>(threads, static_cast<int>(cfg.epsilons.size())));
  if (pool == 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    for (int t = 0; t < pool; ++t) pool_threads.emplace_back(worker);
    for (auto& t : pool_threads) t.join();
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  std::vector<double> log_rmse_ml, log_cost_ml, log_rmse_sl, log_cost_sl;
  for (const auto& row : result.rows) {
    log_rmse_ml.push_back(std::log(row.rmse_mletpf));
    log_cost_ml.push_back(std::log(static_cast<double>(row.cost_mletpf.total())));
    log_rmse_sl.push_back(std::log(row.rmse_etpf));
    log_cost_sl.push_back(std::log(static_cast<double>(row.cost_etpf.total())));
  }
  if (result.rows.size() >= 2) {
    result.mletpf_slope = linear_slope(log_rmse_ml, log_cost_ml);
    result.etpf_slope = linear_slope(log_rmse_sl, log_cost_sl);
  }

  auto out = open_csv(dir / "cost_vs_accuracy.csv", cfg, seed);
  out << "epsilon,rmse_mletpf,model_ops_mletpf,transform_ops_mletpf,sort_ops_mletpf,"
         "likelihood_ops_mletpf,cost_mletpf,rmse_etpf,model_ops_etpf,transform_ops_etpf,"
         "sort_ops_etpf,likelihood_ops_etpf,cost_etpf\n";
  for (const auto& row : result.rows) {
    out << row.epsilon << "," << row.rmse_mletpf << "," << row.cost_mletpf.model_ops
        << "," << row.cost_mletpf.transform_ops << "," << row.cost_mletpf.sort_ops << ","
        << row.cost_mletpf.likelihood_ops << "," << row.cost_mletpf.total() << ","
        << row.rmse_etpf << "," << row.cost_etpf.model_ops << ","
        << row.cost_etpf.transform_ops << "," << row.cost_etpf.sort_ops << ","
        << row.cost_etpf.likelihood_ops << "," << row.cost_etpf.total() << "\n";
  }
  return result;
}

StabilityResult stability(const ExperimentConfig& cfg, std::uint64_t seed, int threads,
                          const std::string& out_dir) {
  const auto model = cfg.make_model();
  const auto twin = make_observations(cfg, cfg.L + cfg.ref_level_offset);
  const auto run = multilevel::run_mletpf(model, twin.stream, cfg.make_multilevel(), seed,
                                          threads);

  StabilityResult result;
  result.times = twin.stream.times;
  result.obs_rmse = metrics::cumulative_rmse_series(twin.stream.values, twin.reference);
  result.estimator_rmse = metrics::cumulative_rmse_series(run.estimates, twin.reference);
  const Eigen::MatrixXd ref_sq = twin.reference.array().square();
  result.obs_rmse_sq = metrics::cumulative_rmse_series(
      twin.stream.values.array().square().matrix(), ref_sq);
  result.estimator_rmse_sq =
      metrics::cumulative_rmse_series(run.estimates.array().square().matrix(), ref_sq);

  const std::filesystem::path dir(out_dir);
  write_observations_csv(dir, cfg, seed, twin);
  auto out = open_csv(dir / "stability.csv", cfg, seed);
  out << "k,t,obs_rmse,estimator_rmse,obs_rmse_sq,estimator_rmse_sq\n";
  for (Eigen::Index k = 0; k < result.times.size(); ++k) {
    out << (k + 1) << "," << result.times[k] << "," << result.obs_rmse[k] << ","
        << result.estimator_rmse[k] << "," << result.obs_rmse_sq[k] << ","
        << result.estimator_rmse_sq[k] << "\n";
  }
  return result;
}

namespace {

metrics::RunSummary summarize(const ExperimentConfig& cfg,
                              const multilevel::MultilevelRun& run,
                              const models::TwinExperiment& twin) {
  metrics::RunSummary summary;
  summary.rmse = metrics::time_averaged_rmse(run.estimates, twin.reference);
  for (const auto& level : run.levels) {
    summary.mean_variance_trace.push_back(level.var_trace.mean());
    summary.mean_abs_difference.push_back(
        level.term_means.cwiseAbs().rowwise().sum().mean());
  }
  summary.cost = run.ledger;
  summary.config_echo = cfg.canonical_json();
  return summary;
}

void write_run_csv(const std::filesystem::path& path, const ExperimentConfig& cfg,
                   std::uint64_t seed, const models::ObservationStream& obs,
                   const multilevel::MultilevelRun& run) {
  auto out = open_csv(path, cfg, seed);
  const int d = static_cast<int>(run.estimates.cols());
  out << "k,t";
  for (int c = 0; c < d; ++c) out << ",estimate_" << (c + 1);
  for (const auto& level : run.levels) out << ",vhat_l" << level.level;
  for (std::size_t l = 1; l < run.levels.size(); ++l) {
    for (int c = 0; c < d; ++c) out << ",diff_l" << l << "_" << (c + 1);
  }
  out << ",cum_model_ops,cum_transform_ops,cum_sort_ops,cum_likelihood_ops,cum_total\n";
  for (Eigen::Index k = 0; k < obs.times.size(); ++k) {
    out << (k + 1) << "," << obs.times[k];
    for (int c = 0; c < d; ++c) out << "," << run.estimates(k, c);
    for (const auto& level : run.levels) out << "," << level.var_trace[k];
    for (std::size_t l = 1; l < run.levels.size(); ++l) {
      for (int c = 0; c < d; ++c) out << "," << run.levels[l].term_means(k, c);
    }
    metrics::CostLedger cum;
    for (const auto& level : run.levels) cum += level.cumulative[k];
    out << "," << cum.model_ops << "," << cum.transform_ops << "," << cum.sort_ops << ","
        << cum.likelihood_ops << "," << cum.total() << "\n";
  }
}

}  // namespace

metrics::RunSummary run_mletpf_experiment(const ExperimentConfig& cfg,
                                          std::uint64_t seed, int threads,
                                          const std::string& out_dir) {
  const auto model = cfg.make_model();
  const auto twin = make_observations(cfg, cfg.L + cfg.ref_level_offset);
  const auto run =
      multilevel::run_mletpf(model, twin.stream, cfg.make_multilevel(), seed, threads);

  const std::filesystem::path dir(out_dir);
  write_observations_csv(dir, cfg, seed, twin);
  write_run_csv(dir / "mletpf_run.csv", cfg, seed, twin.stream, run);
  const auto summary = summarize(cfg, run, twin);
  std::ofstream json_out(dir / "mletpf_summary.json");
  json_out << summary.to_json() << "\n";
  return summary;
}

metrics::RunSummary run_etpf_experiment(const ExperimentConfig& cfg, std::uint64_t seed,
                                        const std::string& out_dir) {
  const auto model = cfg.make_model();
  const auto twin = make_observations(cfg, cfg.L + cfg.ref_level_offset);
  const auto run =
      multilevel::run_etpf(model, twin.stream, cfg.N0, cfg.L, cfg.make_multilevel(), seed);

  const std::filesystem::path dir(out_dir);
  write_observations_csv(dir, cfg, seed, twin);
  write_estimates_csv(dir / "etpf_run.csv", cfg, seed, twin.stream.times, run.estimates);

  metrics::RunSummary summary;
  summary.rmse = metrics::time_averaged_rmse(run.estimates, twin.reference);
  summary.cost = run.ledger;
  summary.config_echo = cfg.canonical_json();
  std::ofstream json_out(dir / "etpf_summary.json");
  json_out << summary.to_json() << "\n";
  return summary;
}

}  // namespace mletpf::experiments
