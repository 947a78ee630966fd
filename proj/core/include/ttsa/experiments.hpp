#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ttsa/model.hpp"
#include "ttsa/stats.hpp"

namespace ttsa::experiments {

// Which iterate a sweep analysis fits and plots. The measurement files always
// carry both; this only selects the headline quantity.
enum class Target { kSlow, kFast };

// Richardson-Romberg pairing(s) used by the ta-vs-rr analysis.
enum class Pairing { kBetaOnly, kAlphaBeta, kBoth };

struct GenerateSpec {
  int d_x = 2;
  int d_y = 2;
  int n_states = 10;
  std::uint64_t seed = 54;
  model::InstanceParams params;
};

// Everything a run needs, round-trippable through JSON (schema 1).
struct ExperimentConfig {
  int schema = 1;
  std::string name = "custom";
  Target target = Target::kSlow;

  // Instance source: a JSON file on disk, or a generator spec.
  std::string instance_path;  // empty means generate
  GenerateSpec generate;

  std::vector<std::string> analyses;

  // Stepsize grids for the sweep analyses, and the fixed pair used by
  // whichever axis is not being swept (and by ta-vs-rr / coupling-decay /
  // oracle-comparison).
  std::vector<double> alphas;
  std::vector<double> betas;
  double alpha_fixed = 3e-4;
  double beta_fixed = 0.05;
  Pairing pairing = Pairing::kBetaOnly;

  long n_steps = 2'000'000;
  int n_replicas = 200;
  double warmup_factor = 10.0;  // t0 = ceil(warmup_factor / (alpha * mu_x))
  int n_checkpoints = 100;

  int n_pairs = 200;            // coupling-decay
  double coupling_radius = 1.0;

  double c1 = 1.0;
  double c2 = 1.0;
  std::uint64_t seed = 1;
};

ExperimentConfig preset(const std::string& name);  // fig1 fig2 fig5 fig6
std::string config_to_json(const ExperimentConfig& config);
ExperimentConfig config_from_json(const std::string& text);
void save_config(const ExperimentConfig& config, const std::string& path);
ExperimentConfig load_config(const std::string& path);

// One Monte Carlo measurement at a stepsize pair: ensemble tail averages and
// finals reduced to bias/variance estimates. Diverged replicas are dropped
// from the estimate and counted.
struct SweepPoint {
  double alpha = 0.0;
  double beta = 0.0;
  long t0 = 0;
  int n_replicas = 0;
  int n_diverged = 0;
  stats::BiasVarianceEstimate estimate;
};

SweepPoint measure_point(const model::ProblemInstance& instance, double alpha,
                         double beta, long n_steps, int n_replicas,
                         double warmup_factor, std::uint64_t seed,
                         int threads);

// Tail-average error curves at one beta for the ta-vs-rr analysis. Vectors
// are indexed by checkpoint; pairings that were not requested stay empty.
struct TailErrorCurves {
  double alpha = 0.0;
  double beta = 0.0;
  long t0 = 0;
  std::vector<long> t;
  std::vector<double> ta_x, ta_y;
  std::vector<double> rr_beta_x, rr_beta_y;
  std::vector<double> rr_ab_x, rr_ab_y;
  // Means over checkpoints in the last tenth of the horizon.
  double tail_ta_x = 0.0, tail_ta_y = 0.0;
  double tail_rr_beta_x = 0.0, tail_rr_beta_y = 0.0;
  double tail_rr_ab_x = 0.0, tail_rr_ab_y = 0.0;
  int n_used = 0;      // replica pairs surviving divergence screening
  int n_diverged = 0;  // replicas dropped across the ensembles involved
};

// Exit discipline shared with the CLI: 0 all analyses completed, 1 an
// assumption or configuration check failed, 2 a runtime failure such as
// majority divergence.
enum class RunStatus : int { kOk = 0, kValidationFailed = 1, kRuntimeFailed = 2 };

struct RunOutcome {
  RunStatus status = RunStatus::kOk;
  std::string message;             // empty on success
  std::vector<std::string> files;  // paths written, relative to out_dir
  std::string manifest_path;
};

RunOutcome run_experiment(const ExperimentConfig& config,
                          const std::string& out_dir, int threads);

}  // namespace ttsa::experiments
