#pragma once

// Problem instances for linear two-timescale recursions driven by a finite
// Markov chain:
//
//   x_{t+1} = x_t - alpha * (F(x_t, y_t) + w_x(x_t, y_t; xi_t))
//   y_{t+1} = y_t - beta  * (G(x_t, y_t) + w_y(x_t, y_t; xi_t))
//
// with F = J11 x + J12 y + b1, G = J21 x + J22 y + b2 and state-dependent
// noise w_x = W11(xi) x + W12(xi) y + u1(xi), w_y analogous.  The noise
// coefficients are centered under the stationary distribution at ingest.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttsa/markov_chain.hpp"
#include "ttsa/spectral.hpp"

namespace ttsa::model {

struct NoiseField {
  std::vector<Eigen::MatrixXd> w11, w12, w21, w22;  // one block per state
  std::vector<Eigen::VectorXd> u1, u2;
  double w_max = 0.0;    // max operator norm over all W blocks after scaling
  double u_max = 0.0;    // max Euclidean norm over all u vectors
  double rescale = 1.0;  // factor applied to the W blocks so w_max <= j_max
};

// Knobs of the random instance generator.
struct InstanceParams {
  double eig_delta_lo = 0.5, eig_delta_hi = 1.5;  // eigenvalue range of delta
  double eig_j22_lo = 0.5, eig_j22_hi = 1.5;      // eigenvalue range of J22
  double noise_scale = 1.0;
  double coupling_scale = 0.5;
  double min_entry = 0.01;  // kernel entry floor
};

struct SeedInfo {
  bool present = false;
  std::uint64_t seed = 0;
  InstanceParams params;
};

struct ProblemInstance {
  Eigen::Index d_x = 0, d_y = 0;
  Eigen::MatrixXd j11, j12, j21, j22;
  Eigen::VectorXd b1, b2;
  chain::MarkovChain markov;
  NoiseField noise;

  // Derived at assembly.
  spectral::DerivedConstants derived;
  Eigen::VectorXd x_star, y_star;
  double sigma_x = 0.0;  // max over states of ||W11 x* + W12 y* + u1||
  double sigma_y = 0.0;  // max over states of ||W21 x* + W22 y* + u2||

  SeedInfo seed_info;

  int n_states() const { return markov.n(); }
  const spectral::SpectralConstants& constants() const {
    return derived.constants;
  }

  // Fast-block equilibrium for a frozen slow iterate:
  // y*(x) = -J22^{-1} (J21 x + b2).
  Eigen::VectorXd y_star_of(const Eigen::VectorXd& x) const;
};

// Validates shapes, centers the noise, enforces w_max <= j_max by globally
// rescaling the W blocks, and computes fixed point, spectral constants, and
// noise scales.  Throws DimensionError / StabilityError / SingularityError.
ProblemInstance assemble_instance(Eigen::MatrixXd j11, Eigen::MatrixXd j12,
                                  Eigen::MatrixXd j21, Eigen::MatrixXd j22,
                                  Eigen::VectorXd b1, Eigen::VectorXd b2,
                                  chain::MarkovChain markov, NoiseField noise);

// Deterministic-in-seed generator: draws eigenvalues in the configured
// ranges, conjugates by random orthogonal bases, backs out J11 from the
// Schur complement, and attaches Gaussian noise and a random kernel.
ProblemInstance random_instance(int d_x, int d_y, int n_states,
                                std::uint64_t seed,
                                const InstanceParams& params = {});

struct StepsizeReport {
  double alpha = 0.0, beta = 0.0;
  double c1 = 1.0, c2 = 1.0;  // constants in the two feasibility budgets
  long tau = 1;               // mixing time at this alpha
  double m1 = 0.0;            // c1 / (j_max kappa_y^2 kappa_x^2) - beta * tau
  double m2 = 0.0;            // c2 / (kappa_y^3 kappa_x) - alpha / beta
  bool feasible = false;      // m1 >= 0 and m2 >= 0
};

// Labels a stepsize pair against the mixing/conditioning budgets.  Reports
// margins but never blocks a simulation.
StepsizeReport validate_stepsizes(const ProblemInstance& instance, double alpha,
                                  double beta, double c1 = 1.0, double c2 = 1.0);

struct OperatorValues {
  Eigen::VectorXd f, g;    // drifts at (x, y)
  Eigen::VectorXd wx, wy;  // noise realizations at state xi
};

OperatorValues evaluate_operators(const ProblemInstance& instance,
                                  const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& y, int xi);

// JSON round trip.  Serialization is exact: reloading reproduces every
// matrix bit for bit and therefore every derived constant.
std::string to_json(const ProblemInstance& instance);
void save_instance(const ProblemInstance& instance, const std::string& path);
ProblemInstance parse_instance(const std::string& json_text);
ProblemInstance load_instance(const std::string& path);

}  // namespace ttsa::model
