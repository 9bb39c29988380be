#pragma once

#include "wsdfm/eval.hpp"
#include "wsdfm/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wsdfm::pipeline {

/// Flat experiment configuration: RunConfig plus dataset, coupling, and
/// evaluation knobs. Serialized as a single flat JSON object whose keys
/// mirror the field names; CLI flags override file values.
struct PipelineConfig {
  RunConfig run;
  GridSpec spec;
  Eigen::Index n_train = 100000;
  Eigen::Index n_eval = 100000;
  double noise_std = 0.04;
  double skl_epsilon = kDefaultSklEpsilon;
  int knn_k = 5;
  int knn_k_inject = 5;

  void validate() const;
};

PipelineConfig load_config_file(const std::filesystem::path& path);
std::string config_json(const PipelineConfig& cfg);

/// A draft-quality tier of the two-moons experiment: a corruption level and
/// the warm-start times swept for it.
struct TierSpec {
  std::string name;
  double p_noise = 0.0;
  std::vector<double> t0_grid;  // strictly descending
};

/// The three contrived tiers and their sweep grids, in table order.
const std::vector<TierSpec>& table1_tiers();

/// Everything measured for one tier at one seed.
struct TierRunResult {
  std::vector<SweepRow> rows;   // one per t0, descending t0 order
  std::vector<double> losses;   // training loss curve of the tier model
};

/// One full experiment at a single seed: vanilla baseline plus every tier.
struct SeedRunResult {
  double baseline_skl = 0.0;
  int baseline_nfe = 0;
  double baseline_wall_seconds = 0.0;
  double noise_skl = 0.0;  // SKL(uniform noise, eval data): the no-model floor
  std::vector<double> baseline_losses;
  std::map<std::string, TierRunResult> tiers;  // keyed by tier name
};

/// Train and evaluate the baseline and all tiers at one seed, in process.
/// `iterations` overrides cfg.run.iterations (the driver default is smaller
/// than the standalone-training default); h is the Euler step for all
/// generation. Logs progress to `log`.
SeedRunResult run_experiment_seed(const PipelineConfig& cfg,
                                  const std::vector<TierSpec>& tiers,
                                  std::uint64_t seed, long iterations, double h,
                                  std::ostream& log);

struct Table1Options {
  std::filesystem::path out_dir;
  std::uint64_t base_seed = 1;
  int n_seeds = 3;
  /// Driver default chosen so the full reproduction fits a desk-scale time
  /// budget; standalone training keeps the RunConfig default.
  long iterations = 25000;
  Eigen::Index n_train = 100000;
  Eigen::Index n_eval = 100000;
  double h = 0.05;
};

struct Table1Row {
  std::string tier;  // "baseline" or a tier name
  double p_noise = 0.0;
  double t0 = 0.0;
  double skl = 0.0;  // median over seeds
  int nfe = 0;
  bool qualifies = false;  // skl <= baseline skl (medians)
};

struct Table1Result {
  std::vector<Table1Row> rows;  // baseline first, then tiers in table order
  double baseline_skl = 0.0;    // median
  double noise_skl = 0.0;       // median
  std::map<std::string, std::optional<double>> selected_t0;  // per tier
  double wall_seconds = 0.0;
};

/// The Table-1 reproduction driver: runs run_experiment_seed for each seed,
/// writes per-seed metrics CSVs, per-model loss curves, the median report
/// CSV (baseline row first), and summary.json into out_dir.
Table1Result reproduce_table1(const PipelineConfig& cfg,
                              const Table1Options& opts, std::ostream& log);

/// Full command-line surface; returns the process exit code
/// (0 ok, 2 usage/validation, 3 runtime/numerical failure).
int run_cli(int argc, char** argv);

}  // namespace wsdfm::pipeline
