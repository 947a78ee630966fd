#pragma once

// Estimators over trajectories and ensembles: tail averages, extrapolation
// of paired tail averages, cross-replica bias/variance with bootstrap
// intervals, and small weighted scaling fits.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "ttsa/engine.hpp"
#include "ttsa/model.hpp"

namespace ttsa::stats {

// Tail average over the inclusive window [t0, t]; divisor is the number of
// terms t - t0 + 1.
struct TailSummary {
  double alpha = 0.0, beta = 0.0;
  long t0 = 0, t = 0;
  Eigen::VectorXd x, y;
};

// Requires every index of [t0, t] recorded (stride 1 over the window);
// throws ResolutionError otherwise.
TailSummary tail_average(const engine::Trajectory& traj, long t0, long t);
std::vector<TailSummary> tail_average(const engine::Ensemble& ensemble,
                                      long t0, long t);

enum class ExtrapolationMode {
  kAlphaBeta,  // paired run has both stepsizes doubled
  kBetaOnly,   // paired run has only beta doubled
};

// Linear extrapolation 2*base - doubled, canceling the leading stepsize
// bias.  The pairing (stepsize ratios, window, replica count) is checked
// exactly; construct the doubled configuration by multiplying by 2.0.
TailSummary extrapolate(const TailSummary& base, const TailSummary& doubled,
                        ExtrapolationMode mode);
std::vector<TailSummary> extrapolate(const std::vector<TailSummary>& base,
                                     const std::vector<TailSummary>& doubled,
                                     ExtrapolationMode mode);

struct ReplicaSummary {
  TailSummary tail;
  Eigen::VectorXd x_final, y_final;  // iterate at the end of the run
};

struct BiasVarianceEstimate {
  int n_replicas = 0;
  // Bias of the tail averages against the fixed point, with standard errors
  // from replica scatter.
  Eigen::VectorXd bias_x, bias_x_se;
  Eigen::VectorXd bias_ybar, bias_ybar_se;
  // Trace of the cross-replica sample covariance of the final iterates,
  // with bootstrap standard errors and percentile intervals.
  double var_x = 0.0, var_y = 0.0;
  double var_x_se = 0.0, var_y_se = 0.0;
  double var_x_ci_lo = 0.0, var_x_ci_hi = 0.0;
  double var_y_ci_lo = 0.0, var_y_ci_hi = 0.0;
  // Defined as squared bias norm plus variance.
  double mse_x = 0.0, mse_y = 0.0;
  bool few_replicas = false;  // fewer than 30 replicas
};

BiasVarianceEstimate estimate_bias_variance(
    const model::ProblemInstance& instance,
    const std::vector<ReplicaSummary>& replicas,
    std::uint64_t bootstrap_seed = 2024, int n_bootstrap = 1000);

enum class ScalingModel {
  kAffine,       // y = a + b x
  kPowerLaw,     // y = exp(a) x^b, fitted in log-log space
  kExponential,  // y = exp(a) exp(b x), fitted in semilog space
};

struct ScalingFit {
  ScalingModel model = ScalingModel::kAffine;
  double intercept = 0.0, slope = 0.0;  // in the fitted (possibly log) space
  double intercept_se = 0.0, slope_se = 0.0;
  double residual_norm = 0.0;  // weighted, in the fitted space
  double r_squared = 0.0;
};

// Weighted least squares with weights 1/se^2 (unweighted when `se` is
// empty).  Log models require positive data; throws ValidationError
// otherwise, and DesignError when x does not vary.
ScalingFit fit_scaling(const std::vector<double>& x,
                       const std::vector<double>& y,
                       const std::vector<double>& se, ScalingModel model);

// Value of the fitted model at x, back-transformed out of log space.
double evaluate_fit(const ScalingFit& fit, double x);

// Export of one fit over its grid: CSV rows grid_value,measured,se,fitted,
// residual (se column empty-as-zero when no errors were supplied), and JSON
// with the full fit metadata.
void save_scaling_csv(const std::vector<double>& grid,
                      const std::vector<double>& measured,
                      const std::vector<double>& se, const ScalingFit& fit,
                      const std::string& path);
std::string fit_to_json(const ScalingFit& fit);

// Default warm-up before tail averaging: ten slow time constants.
long default_warmup(double alpha, double mu_x);

}  // namespace ttsa::stats
