#pragma once

// Exact stationary moments of the joint iterate-chain process.  One step of
// the recursion is affine in the joint iterate z = (x, y):
//
//   z_{t+1} = A(xi_t) z_t + c(xi_t),
//
// so the stationary per-state moments solve linear balance equations over
// the chain.  Solving them gives bias and variance with no sampling error,
// which is what the Monte-Carlo estimates are checked against.

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ttsa/model.hpp"

namespace ttsa::moments {

struct LiftedSystem {
  double alpha = 0.0, beta = 0.0;
  std::vector<Eigen::MatrixXd> a;  // per-state joint step matrix
  std::vector<Eigen::VectorXd> c;  // per-state joint offset
  double radius_first = 0.0;       // spectral radius of the first-moment operator
};

// Builds A(xi), c(xi) and the first-moment operator radius.  Throws
// FeasibilityError (radius printed) when the operator is not a contraction.
LiftedSystem lift(const model::ProblemInstance& instance, double alpha,
                  double beta);

struct FirstMoments {
  double alpha = 0.0, beta = 0.0;
  std::vector<Eigen::VectorXd> m;  // E[z | state], one per state
  Eigen::VectorXd mean;            // stationary mean of z
  Eigen::VectorXd bias_x;          // mean_x - x*
  Eigen::VectorXd bias_ybar;       // mean_y - y*(mean_x)
  double radius_first = 0.0;
  double residual_first = 0.0;  // relative residual of the balance solve
};

FirstMoments stationary_first_moments(const model::ProblemInstance& instance,
                                      double alpha, double beta);

struct StationaryMoments {
  FirstMoments first;
  std::vector<Eigen::MatrixXd> s;  // E[z z^T | state], one per state
  Eigen::MatrixXd second;          // stationary E[z z^T]
  Eigen::MatrixXd cov;             // second - mean mean^T
  double var_x_trace = 0.0;        // trace of the x block of cov
  double var_y_trace = 0.0;        // trace of the y block of cov
  double radius_second = 0.0;      // radius of the second-moment operator
  double residual_second = 0.0;
};

StationaryMoments stationary_second_moments(
    const model::ProblemInstance& instance, double alpha, double beta);

struct BiasExpansion {
  Eigen::VectorXd b1x, b2x;  // bias_x(alpha, beta) ~ alpha b1x + beta b2x
  Eigen::VectorXd b1y, b2y;  // same expansion for bias_ybar
  std::vector<double> residuals_x;  // per grid point ||bias_x - fit||
  std::vector<double> residuals_y;
  double max_residual_x = 0.0;
};

// Least-squares fit of the leading bias expansion over a stepsize grid.
// Needs at least three points and independent variation of both stepsizes;
// throws DesignError otherwise.
BiasExpansion bias_expansion(const model::ProblemInstance& instance,
                             const std::vector<std::pair<double, double>>& grid);

// Extrapolation residual r = ||2 bias_x(alpha, beta) - bias_x(2 alpha, 2 beta)||.
// Decays like the square of the stepsizes when the expansion holds.
double extrapolation_residual(const model::ProblemInstance& instance,
                              double alpha, double beta);

// Oracle JSON: stepsizes, bias vectors, variance traces, operator radii,
// balance residuals.
std::string to_json(const StationaryMoments& moments);
void save_moments_json(const StationaryMoments& moments, const std::string& path);

}  // namespace ttsa::moments
