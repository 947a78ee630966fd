#pragma once

// Dense spectral primitives: stability tests, Lyapunov solves, Schatten
// norms, and the derived decay/conditioning constants of a two-block system.
//
// Stability convention used throughout: a matrix A "is stable" iff every
// eigenvalue of A has strictly positive real part, i.e. -A is Hurwitz and
// the iteration I - step*A contracts for small steps.

#include <Eigen/Dense>

namespace ttsa::spectral {

struct HurwitzReport {
  bool stable = false;
  double margin = 0.0;  // min over eigenvalues of Re(lambda); > 0 iff stable
};

// Eigenvalues come from a real Schur reduction.
HurwitzReport is_hurwitz(const Eigen::MatrixXd& a);

struct LyapunovSolution {
  Eigen::MatrixXd q;           // symmetric positive definite solution
  double residual = 0.0;       // ||AᵀQ + QA - I||_F after symmetrization
  double condition = 0.0;      // spectral condition of the vectorized system
  bool conditioning_warning = false;  // condition > 1e12
};

// Solves AᵀQ + QA = I by Kronecker vectorization and a dense LU solve.
// Requires `a` stable in the sense above; throws StabilityError otherwise.
LyapunovSolution solve_lyapunov(const Eigen::MatrixXd& a);

enum class SchattenOrder {
  kOne,  // sum of singular values
  kInf,  // largest singular value
};

double schatten_norm(const Eigen::MatrixXd& a, SchattenOrder order);
double operator_norm(const Eigen::MatrixXd& a);  // Schatten-infinity
double nuclear_norm(const Eigen::MatrixXd& a);   // Schatten-1
double sigma_min(const Eigen::MatrixXd& a);      // smallest singular value

struct SpectralConstants {
  double mu_x = 0.0;     // 1 / ||Q_x||_op, decay rate floor of the slow block
  double mu_y = 0.0;     // 1 / ||Q_y||_op, decay rate floor of the fast block
  double j_max = 0.0;    // max operator norm over the four J blocks
  double kappa_y = 0.0;  // j_max / mu_y
  double kappa_x = 0.0;  // kappa_y * j_max / mu_x
};

struct DerivedConstants {
  Eigen::MatrixXd delta;  // J11 - J12 J22^{-1} J21
  Eigen::MatrixXd q_x;    // Lyapunov solution for delta
  Eigen::MatrixXd q_y;    // Lyapunov solution for J22
  SpectralConstants constants;
  double margin_delta = 0.0;  // stability margin of delta
  double margin_j22 = 0.0;    // stability margin of J22
  bool conditioning_warning = false;
};

// Computes the Schur complement, both Lyapunov solutions, and the scalar
// constants.  Throws SingularityError if J22 is (numerically) singular and
// StabilityError naming the offending matrix if J22 or delta is not stable.
DerivedConstants derived_constants(const Eigen::MatrixXd& j11,
                                   const Eigen::MatrixXd& j12,
                                   const Eigen::MatrixXd& j21,
                                   const Eigen::MatrixXd& j22);

}  // namespace ttsa::spectral
