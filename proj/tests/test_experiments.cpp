#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mletpf/experiments.hpp"

using namespace mletpf;
namespace fs = std::filesystem;

namespace {

fs::path write_temp_config(const std::string& name, const std::string& body) {
  const fs::path path = fs::temp_directory_path() / name;
  std::ofstream out(path);
  out << body;
  return path;
}

const char* kTinyDoubleWell = R"json({
  "name": "tiny_dw",
  "model": {"type": "double_well", "xi": 0.5},
  "observations": {"R": 0.6, "dt": 0.0625, "t_end": 1.0, "seed": 11, "ref_init": [0.0]},
  "filter": {"transform_mode": "localised", "r_loc_c": 0.0},
  "multilevel": {"M": 2, "h0": 0.0625, "L": 2, "N0": 40},
  "init": {"mean": [0.0], "std": 1.0},
  "epsilons": [0.9],
  "truth": {"N_factor": 4, "L_offset": 1},
  "seed": 3,
  "desk_scale": {"multilevel": {"N0": 20}}
})json";

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config loads and resolves") {
  const auto path = write_temp_config("mletpf_tiny1.json", kTinyDoubleWell);
  const auto cfg = experiments::load_experiment_config(path.string(), false);
  CHECK(cfg.name == "tiny_dw");
  CHECK(cfg.model_type == "double_well");
  CHECK(cfg.N0 == 40);
  CHECK(cfg.L == 2);
  CHECK(cfg.R_diag.size() == 1);
  CHECK(cfg.R_diag[0] == 0.6);
  CHECK(cfg.epsilons.size() == 1);
  CHECK(std::isinf(cfg.filter.r_loc_R));

  const auto desk = experiments::load_experiment_config(path.string(), true);
  CHECK(desk.N0 == 20);
  CHECK(desk.L == 2);  // untouched by the override block

  CHECK(cfg.hash_hex() != desk.hash_hex());
  CHECK(cfg.hash_hex() ==
        experiments::load_experiment_config(path.string(), false).hash_hex());
}

TEST_CASE("config validation lists offending fields") {
  const auto path = write_temp_config("mletpf_bad1.json", R"json({
    "name": "bad",
    "model": {"type": "frobnicator"},
    "observations": {"R": -1.0, "dt": 0.0625, "t_end": 1.0, "seed": 1, "ref_init": [0.0]},
    "filter": {"transform_mode": "sideways", "bogus_knob": 1},
    "multilevel": {"M": 2, "h0": 0.0625},
    "init": {"mean": [0.0]}
  })json");
  try {
    experiments::load_experiment_config(path.string(), false);
    FAIL("expected validation failure");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("model.type") != std::string::npos);
    CHECK(msg.find("observations.R") != std::string::npos);
    CHECK(msg.find("filter.transform_mode") != std::string::npos);
    CHECK(msg.find("filter.bogus_knob") != std::string::npos);
    CHECK(msg.find("multilevel.L") != std::string::npos);
  }
}

TEST_CASE("epsilon shorthand resolves L and N0") {
  const auto path = write_temp_config("mletpf_eps.json", R"json({
    "name": "eps",
    "model": {"type": "double_well", "xi": 0.5},
    "observations": {"R": 0.6, "dt": 0.0625, "t_end": 1.0, "seed": 1, "ref_init": [0.0]},
    "filter": {"transform_mode": "localised"},
    "multilevel": {"M": 2, "h0": 0.0625, "epsilon": 0.125},
    "init": {"mean": [0.0]}
  })json");
  const auto cfg = experiments::load_experiment_config(path.string(), false);
  CHECK(cfg.N0 == 64);  // ceil(eps^-2)
  CHECK(cfg.L == 3);    // ceil(log2(1 / 0.125))
}

TEST_CASE("linear slope") {
  CHECK(experiments::linear_slope({0, 1, 2}, {1, 3, 5}) == doctest::Approx(2.0));
  CHECK_THROWS_AS(experiments::linear_slope({1}, {1}), std::invalid_argument);
}

TEST_CASE("variance decay with zero noise has a zero variance column") {
  // xi = 0 and a point-mass initial distribution: every particle in a level
  // pair evolves identically, so the difference-sample variance vanishes while
  // the difference mean keeps the deterministic discretization gap.
  const auto path = write_temp_config("mletpf_zero.json", R"json({
    "name": "zero_noise",
    "model": {"type": "double_well", "xi": 0.0},
    "observations": {"R": 0.6, "dt": 0.0625, "t_end": 0.5, "seed": 2, "ref_init": [0.5]},
    "filter": {"transform_mode": "localised"},
    "multilevel": {"M": 2, "h0": 0.0625, "L": 1, "N0": 12},
    "init": {"mean": [0.5], "std": 0.0}
  })json");
  const auto cfg = experiments::load_experiment_config(path.string(), false);
  const auto out_dir = (fs::temp_directory_path() / "mletpf_zero_out").string();
  const auto result = experiments::variance_decay(cfg, 1, 1, out_dir);
  REQUIRE(result.rows.size() == 1);
  CHECK(result.rows[0].mean_variance_trace == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(result.rows[0].mean_abs_difference > 0.0);
  CHECK(fs::exists(fs::path(out_dir) / "variance_decay.csv"));
}

TEST_CASE("cost-vs-accuracy completes a single-epsilon row") {
  const auto path = write_temp_config("mletpf_tiny2.json", kTinyDoubleWell);
  const auto cfg = experiments::load_experiment_config(path.string(), false);
  const auto out_dir = (fs::temp_directory_path() / "mletpf_cost_out").string();
  fs::remove_all(out_dir);
  const auto result = experiments::cost_vs_accuracy(cfg, 5, 2, out_dir);
  REQUIRE(result.rows.size() == 1);
  CHECK(result.rows[0].epsilon == 0.9);
  CHECK(result.rows[0].rmse_mletpf > 0.0);
  CHECK(result.rows[0].rmse_etpf > 0.0);
  CHECK(result.rows[0].cost_mletpf.total() > 0);
  CHECK(result.rows[0].cost_etpf.total() > 0);

  // The truth proxy is cached; a rerun reuses it and reproduces the bytes.
  const auto csv = slurp(fs::path(out_dir) / "cost_vs_accuracy.csv");
  experiments::cost_vs_accuracy(cfg, 5, 1, out_dir);
  CHECK(slurp(fs::path(out_dir) / "cost_vs_accuracy.csv") == csv);
}

TEST_CASE("stability with tiny observation noise pins the observation curve down") {
  const auto path = write_temp_config("mletpf_stab.json", R"json({
    "name": "stab",
    "model": {"type": "double_well", "xi": 0.5},
    "observations": {"R": 1e-4, "dt": 0.0625, "t_end": 1.0, "seed": 4, "ref_init": [0.0]},
    "filter": {"transform_mode": "localised"},
    "multilevel": {"M": 2, "h0": 0.0625, "L": 1, "N0": 30},
    "init": {"mean": [0.0]}
  })json");
  const auto cfg = experiments::load_experiment_config(path.string(), false);
  const auto out_dir = (fs::temp_directory_path() / "mletpf_stab_out").string();
  const auto result = experiments::stability(cfg, 6, 1, out_dir);
  CHECK(result.obs_rmse[result.obs_rmse.size() - 1] < 0.05);
  CHECK(fs::exists(fs::path(out_dir) / "stability.csv"));
}

TEST_CASE("identical runs are byte-identical across thread counts") {
  const auto path = write_temp_config("mletpf_tiny3.json", kTinyDoubleWell);
  const auto cfg = experiments::load_experiment_config(path.string(), false);
  const auto dir_a = fs::temp_directory_path() / "mletpf_det_a";
  const auto dir_b = fs::temp_directory_path() / "mletpf_det_b";
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
  experiments::run_mletpf_experiment(cfg, 12, 1, dir_a.string());
  experiments::run_mletpf_experiment(cfg, 12, 3, dir_b.string());
  CHECK(slurp(dir_a / "mletpf_run.csv") == slurp(dir_b / "mletpf_run.csv"));
  CHECK(slurp(dir_a / "mletpf_summary.json") == slurp(dir_b / "mletpf_summary.json"));

  const auto header = slurp(dir_a / "mletpf_run.csv");
  CHECK(header.rfind("# config_hash=", 0) == 0);
  CHECK(header.find("seed=12") != std::string::npos);
}

TEST_CASE("etpf run driver writes estimates and summary") {
  const auto path = write_temp_config("mletpf_tiny4.json", kTinyDoubleWell);
  const auto cfg = experiments::load_experiment_config(path.string(), false);
  const auto out_dir = fs::temp_directory_path() / "mletpf_etpf_out";
  fs::remove_all(out_dir);
  const auto summary = experiments::run_etpf_experiment(cfg, 8, out_dir.string());
  CHECK(summary.rmse > 0.0);
  CHECK(fs::exists(out_dir / "etpf_run.csv"));
  CHECK(fs::exists(out_dir / "etpf_summary.json"));
  CHECK(fs::exists(out_dir / "observations.csv"));
}
