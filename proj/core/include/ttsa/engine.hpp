#pragma once

// Trajectory simulation.  One inner loop drives four entry points:
// raw recursions, centered recursions, coupled pairs on a shared chain
// path, and streaming tail averages that never store the full path.
//
// Randomness layout for a run with seed s: the chain path draws from
// sub-stream 0 of s, the initial condition from sub-stream 1, and a second
// (coupled) initial condition from sub-stream 2.  Replica k of an ensemble
// runs with seed split(s, k), so results never depend on thread scheduling.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttsa/model.hpp"

namespace ttsa::engine {

struct InitialCondition {
  enum class Kind { kFixed, kRandomBall };
  Kind kind = Kind::kRandomBall;

  // kFixed only.
  Eigen::VectorXd x0, y0;
  int xi0 = -1;  // fixed chain state; -1 draws from the stationary law

  // kRandomBall: (x0, y0) uniform in the joint ball of this radius around
  // (x*, y*); the chain state is drawn from the stationary law.
  double radius = 1.0;

  static InitialCondition fixed(Eigen::VectorXd x, Eigen::VectorXd y,
                                int xi = -1);
  static InitialCondition ball(double radius = 1.0);
};

struct SimConfig {
  double alpha = 0.0;
  double beta = 0.0;
  long n_steps = 0;
  // Stride between recorded indices; 0 means stride 1 up to step 10^4 and
  // stride 10 beyond.  Index 0 and the final index are always recorded.
  long record_every = 1;
  std::uint64_t seed = 0;
  InitialCondition initial;
};

// Entries above this magnitude (or NaN) truncate the run.
inline constexpr double kBlowupLimit = 1e15;

struct Trajectory {
  Eigen::Index d_x = 0, d_y = 0;
  double alpha = 0.0, beta = 0.0;
  std::vector<long> t;    // recorded indices, ascending
  std::vector<int> xi;    // chain state at each recorded index
  std::vector<double> x_data, y_data;  // one row per recorded index
  bool diverged = false;
  long divergence_step = -1;  // first index with an out-of-range entry

  std::size_t size() const { return t.size(); }
  Eigen::Map<const Eigen::VectorXd> x_at(std::size_t i) const {
    return {x_data.data() + i * static_cast<std::size_t>(d_x), d_x};
  }
  Eigen::Map<const Eigen::VectorXd> y_at(std::size_t i) const {
    return {y_data.data() + i * static_cast<std::size_t>(d_y), d_y};
  }
};

// Runs the raw recursion.
Trajectory simulate(const model::ProblemInstance& instance,
                    const SimConfig& config);

// Runs the recursion in centered coordinates (x - x*, y - y*(x)).  With the
// same seed this reproduces simulate() exactly up to rounding drift.
Trajectory simulate_centered(const model::ProblemInstance& instance,
                             const SimConfig& config);

struct CoupledPair {
  Trajectory first, second;
  // Distances at the recorded indices of `first`: ||x1 - x2|| and the
  // centered fast distance ||(y1 - y*(x1)) - (y2 - y*(x2))||.
  std::vector<double> delta_x, delta_ybar;
};

// Two trajectories driven by one chain path; initial conditions differ.
CoupledPair simulate_coupled(const model::ProblemInstance& instance,
                             const SimConfig& config,
                             const InitialCondition& second_initial);

struct Ensemble {
  std::vector<Trajectory> replicas;
};

Ensemble simulate_ensemble(const model::ProblemInstance& instance,
                           const SimConfig& config, int n_replicas,
                           int n_threads = 1);

// Streaming tail statistics: running averages over [t0, c] for each
// checkpoint c, plus the final iterate, without storing the path.
struct TailSpec {
  long t0 = 0;
  std::vector<long> checkpoints;  // ascending, in [t0, n_steps]
};

struct TailResult {
  double alpha = 0.0, beta = 0.0;
  long t0 = 0;
  std::vector<long> checkpoints;
  std::vector<Eigen::VectorXd> x_avg, y_avg;  // tail average at each checkpoint
  Eigen::VectorXd x_final, y_final;           // iterate at the last step
  bool diverged = false;
  long divergence_step = -1;
};

TailResult simulate_tail(const model::ProblemInstance& instance,
                         const SimConfig& config, const TailSpec& spec);

std::vector<TailResult> simulate_tail_ensemble(
    const model::ProblemInstance& instance, const SimConfig& config,
    const TailSpec& spec, int n_replicas, int n_threads = 1);

// Coupled-distance curves for an ensemble of pairs: mean squared distances
// over pairs at the recorded indices of the first replica.
struct CouplingCurve {
  std::vector<long> t;
  std::vector<double> mean_sq_delta_x, mean_sq_delta_ybar;
  int n_pairs = 0;
};

CouplingCurve coupled_ensemble_curve(const model::ProblemInstance& instance,
                                     const SimConfig& config,
                                     const InitialCondition& second_initial,
                                     int n_pairs, int n_threads = 1);

// CSV export: header t,xi,x_0..x_{dx-1},y_0..y_{dy-1}, 17 significant digits.
void save_trajectory_csv(const Trajectory& traj, const std::string& path);

}  // namespace ttsa::engine
