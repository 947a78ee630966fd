#pragma once

// Finite ergodic Markov chains: construction and validation of kernels,
// stationary distributions, geometric mixing parameters, and a deterministic
// sampler for driving simulations.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttsa/rng.hpp"

namespace ttsa::chain {

struct MarkovChain {
  Eigen::MatrixXd kernel;  // row-stochastic transition matrix
  Eigen::VectorXd pi;      // stationary distribution, all entries positive
  double rho = 0.0;        // second-largest eigenvalue modulus, in [0, 1)
  double c_rho = 1.0;      // smallest prefactor c with ||P^n d - pi||_1 <= c rho^n
                           // over all point masses d on the fitted horizon; >= 1

  int n() const { return static_cast<int>(kernel.rows()); }
};

// Validates a kernel (square, nonnegative, rows summing to 1 within 1e-9),
// renormalizes rows exactly, and computes pi, rho, and c_rho.  Throws
// ErgodicityError for reducible or periodic kernels.
MarkovChain build_chain(const Eigen::MatrixXd& kernel);

// Random ergodic chain on n states, deterministic in the seed.  Every entry
// is at least min_entry; requires 0 < min_entry and n * min_entry < 1.
MarkovChain random_chain(int n, std::uint64_t seed, double min_entry);

struct MixingTime {
  long tau = 1;       // smallest n with c_rho * rho^n <= threshold, floored at 1
  bool capped = false;  // true when the threshold already exceeded c_rho
};

// Number of steps after which the mixing bound drops below alpha * mu_x.
MixingTime mixing_time(const MarkovChain& chain, double alpha, double mu_x);

// Stateful sampler over a chain.  All randomness comes from the stream passed
// in, so equal keys reproduce the state sequence bit for bit.
class ChainSampler {
 public:
  ChainSampler(const MarkovChain& chain, rng::Stream stream, int initial_state);

  // Draws the initial state from the stationary distribution.
  static ChainSampler from_stationary(const MarkovChain& chain,
                                      rng::Stream stream);

  int state() const { return state_; }

  // Advances one transition and returns the new state.
  int step();

 private:
  std::vector<std::vector<double>> cum_rows_;
  rng::Stream stream_;
  int state_;
};

// Kernel CSV round trip: one row per state, no header, 17 significant digits.
void save_kernel_csv(const Eigen::MatrixXd& kernel, const std::string& path);
Eigen::MatrixXd load_kernel_csv(const std::string& path);

}  // namespace ttsa::chain
