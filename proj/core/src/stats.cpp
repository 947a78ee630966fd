#include "ttsa/stats.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ttsa/csv.hpp"
#include "ttsa/errors.hpp"
#include "ttsa/rng.hpp"

namespace ttsa::stats {

namespace {

// Index of `value` in the recorded indices, requiring presence.
std::size_t find_index(const engine::Trajectory& traj, long value,
                       const char* what) {
  const auto it = std::lower_bound(traj.t.begin(), traj.t.end(), value);
  if (it == traj.t.end() || *it != value) {
    std::ostringstream os;
    os << what << " index " << value << " is not recorded"
       << (traj.diverged ? " (trajectory truncated by divergence)" : "");
    throw ResolutionError(os.str());
  }
  return static_cast<std::size_t>(it - traj.t.begin());
}

double percentile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double idx = p * static_cast<double>(v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
  const std::size_t hi = static_cast<std::size_t>(std::ceil(idx));
  const double frac = idx - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

// Trace of the sample covariance (divisor n-1) of the rows.
double covariance_trace(const Eigen::MatrixXd& rows) {
  const Eigen::Index n = rows.rows();
  if (n < 2) return 0.0;
  const Eigen::RowVectorXd mean = rows.colwise().mean();
  return (rows.rowwise() - mean).squaredNorm() / static_cast<double>(n - 1);
}

}  // namespace

TailSummary tail_average(const engine::Trajectory& traj, long t0, long t) {
  if (t0 < 0 || t < t0) {
    throw ValidationError("tail window needs 0 <= t0 <= t");
  }
  const std::size_t i0 = find_index(traj, t0, "window start");
  const std::size_t i1 = find_index(traj, t, "window end");
  if (i1 - i0 != static_cast<std::size_t>(t - t0)) {
    std::ostringstream os;
    os << "window [" << t0 << ", " << t << "] is not recorded at stride 1 ("
       << (i1 - i0 + 1) << " of " << (t - t0 + 1) << " indices present)";
    throw ResolutionError(os.str());
  }
  TailSummary out;
  out.alpha = traj.alpha;
  out.beta = traj.beta;
  out.t0 = t0;
  out.t = t;
  Eigen::VectorXd sx = Eigen::VectorXd::Zero(traj.d_x);
  Eigen::VectorXd sy = Eigen::VectorXd::Zero(traj.d_y);
  for (std::size_t i = i0; i <= i1; ++i) {
    sx += traj.x_at(i);
    sy += traj.y_at(i);
  }
  const double inv = 1.0 / static_cast<double>(t - t0 + 1);
  out.x = inv * sx;
  out.y = inv * sy;
  return out;
}

std::vector<TailSummary> tail_average(const engine::Ensemble& ensemble,
                                      long t0, long t) {
  std::vector<TailSummary> out;
  out.reserve(ensemble.replicas.size());
  for (const auto& traj : ensemble.replicas) {
    out.push_back(tail_average(traj, t0, t));
  }
  return out;
}

TailSummary extrapolate(const TailSummary& base, const TailSummary& doubled,
                        ExtrapolationMode mode) {
  const double want_alpha =
      mode == ExtrapolationMode::kAlphaBeta ? 2.0 * base.alpha : base.alpha;
  if (doubled.alpha != want_alpha || doubled.beta != 2.0 * base.beta) {
    std::ostringstream os;
    os << "stepsize pairing mismatch: base (" << base.alpha << ", " << base.beta
       << "), doubled (" << doubled.alpha << ", " << doubled.beta << ")";
    throw PairingError(os.str());
  }
  if (base.t0 != doubled.t0 || base.t != doubled.t) {
    throw PairingError("paired tail averages use different windows");
  }
  if (base.x.size() != doubled.x.size() || base.y.size() != doubled.y.size()) {
    throw PairingError("paired tail averages have different dimensions");
  }
  TailSummary out = base;
  out.x = 2.0 * base.x - doubled.x;
  out.y = 2.0 * base.y - doubled.y;
  return out;
}

std::vector<TailSummary> extrapolate(const std::vector<TailSummary>& base,
                                     const std::vector<TailSummary>& doubled,
                                     ExtrapolationMode mode) {
  if (base.size() != doubled.size()) {
    throw PairingError("paired ensembles have different replica counts");
  }
  std::vector<TailSummary> out;
  out.reserve(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    out.push_back(extrapolate(base[i], doubled[i], mode));
  }
  return out;
}

BiasVarianceEstimate estimate_bias_variance(
    const model::ProblemInstance& instance,
    const std::vector<ReplicaSummary>& replicas, std::uint64_t bootstrap_seed,
    int n_bootstrap) {
  const int r = static_cast<int>(replicas.size());
  if (r < 2) {
    throw ValidationError("bias/variance estimation needs at least 2 replicas");
  }
  const Eigen::Index dx = instance.d_x;
  const Eigen::Index dy = instance.d_y;

  Eigen::MatrixXd tails_x(r, dx), tails_ybar(r, dy);
  Eigen::MatrixXd finals_x(r, dx), finals_y(r, dy);
  for (int k = 0; k < r; ++k) {
    const auto& rep = replicas[static_cast<std::size_t>(k)];
    tails_x.row(k) = rep.tail.x.transpose();
    // The affine fast-block equilibrium commutes with time averaging, so the
    // centered fast average is the fast average minus y*(slow average).
    tails_ybar.row(k) =
        (rep.tail.y - instance.y_star_of(rep.tail.x)).transpose();
    finals_x.row(k) = rep.x_final.transpose();
    finals_y.row(k) = rep.y_final.transpose();
  }

  BiasVarianceEstimate out;
  out.n_replicas = r;
  out.few_replicas = r < 30;

  const double inv_sqrt_r = 1.0 / std::sqrt(static_cast<double>(r));
  const auto column_se = [&](const Eigen::MatrixXd& rows) {
    const Eigen::RowVectorXd mean = rows.colwise().mean();
    const Eigen::RowVectorXd var =
        (rows.rowwise() - mean).array().square().colwise().sum() /
        static_cast<double>(r - 1);
    return (var.array().sqrt() * inv_sqrt_r).matrix().transpose().eval();
  };

  out.bias_x = tails_x.colwise().mean().transpose() - instance.x_star;
  out.bias_x_se = column_se(tails_x);
  out.bias_ybar = tails_ybar.colwise().mean().transpose();
  out.bias_ybar_se = column_se(tails_ybar);

  out.var_x = covariance_trace(finals_x);
  out.var_y = covariance_trace(finals_y);

  // Percentile bootstrap over replicas.
  rng::Stream stream(rng::split(bootstrap_seed, 0));
  std::vector<double> boot_x, boot_y;
  boot_x.reserve(static_cast<std::size_t>(n_bootstrap));
  boot_y.reserve(static_cast<std::size_t>(n_bootstrap));
  Eigen::MatrixXd sample_x(r, dx), sample_y(r, dy);
  for (int b = 0; b < n_bootstrap; ++b) {
    for (int k = 0; k < r; ++k) {
      const int pick = static_cast<int>(stream.next_u64() %
                                        static_cast<std::uint64_t>(r));
      sample_x.row(k) = finals_x.row(pick);
      sample_y.row(k) = finals_y.row(pick);
    }
    boot_x.push_back(covariance_trace(sample_x));
    boot_y.push_back(covariance_trace(sample_y));
  }
  const auto sd = [](const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / (n - 1.0));
  };
  if (n_bootstrap >= 2) {
    out.var_x_se = sd(boot_x);
    out.var_y_se = sd(boot_y);
    out.var_x_ci_lo = percentile(boot_x, 0.025);
    out.var_x_ci_hi = percentile(boot_x, 0.975);
    out.var_y_ci_lo = percentile(boot_y, 0.025);
    out.var_y_ci_hi = percentile(boot_y, 0.975);
  }

  out.mse_x = out.bias_x.squaredNorm() + out.var_x;
  out.mse_y = out.bias_ybar.squaredNorm() + out.var_y;
  return out;
}

ScalingFit fit_scaling(const std::vector<double>& x,
                       const std::vector<double>& y,
                       const std::vector<double>& se, ScalingModel model) {
  const std::size_t n = x.size();
  if (y.size() != n || (!se.empty() && se.size() != n)) {
    throw DimensionError("fit inputs must have matching lengths");
  }
  if (n < 2) throw DesignError("scaling fit needs at least two points");

  std::vector<double> fx(n), fy(n), w(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    switch (model) {
      case ScalingModel::kAffine:
        fx[i] = x[i];
        fy[i] = y[i];
        if (!se.empty()) {
          if (!(se[i] > 0.0)) throw ValidationError("standard errors must be positive");
          w[i] = 1.0 / (se[i] * se[i]);
        }
        break;
      case ScalingModel::kPowerLaw:
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) {
          throw ValidationError("power-law fit needs positive data");
        }
        fx[i] = std::log(x[i]);
        fy[i] = std::log(y[i]);
        if (!se.empty()) {
          if (!(se[i] > 0.0)) throw ValidationError("standard errors must be positive");
          const double sl = se[i] / y[i];  // delta-method in log space
          w[i] = 1.0 / (sl * sl);
        }
        break;
      case ScalingModel::kExponential:
        if (!(y[i] > 0.0)) {
          throw ValidationError("exponential fit needs positive data");
        }
        fx[i] = x[i];
        fy[i] = std::log(y[i]);
        if (!se.empty()) {
          if (!(se[i] > 0.0)) throw ValidationError("standard errors must be positive");
          const double sl = se[i] / y[i];
          w[i] = 1.0 / (sl * sl);
        }
        break;
    }
  }

  const double xmin = *std::min_element(fx.begin(), fx.end());
  const double xmax = *std::max_element(fx.begin(), fx.end());
  if (!(xmax > xmin)) throw DesignError("fit abscissae do not vary");

  double sw = 0, swx = 0, swy = 0, swxx = 0, swxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sw += w[i];
    swx += w[i] * fx[i];
    swy += w[i] * fy[i];
    swxx += w[i] * fx[i] * fx[i];
    swxy += w[i] * fx[i] * fy[i];
  }
  const double det = sw * swxx - swx * swx;
  if (!(std::abs(det) > 0.0)) throw DesignError("degenerate fit design");

  ScalingFit fit;
  fit.model = model;
  fit.slope = (sw * swxy - swx * swy) / det;
  fit.intercept = (swxx * swy - swx * swxy) / det;

  double rss = 0.0, tss = 0.0;
  const double ymean = swy / sw;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = fy[i] - (fit.intercept + fit.slope * fx[i]);
    rss += w[i] * r * r;
    tss += w[i] * (fy[i] - ymean) * (fy[i] - ymean);
  }
  fit.residual_norm = std::sqrt(rss);
  fit.r_squared = tss > 0.0 ? 1.0 - rss / tss : 1.0;
  if (n > 2) {
    const double sigma2 = rss / static_cast<double>(n - 2);
    fit.slope_se = std::sqrt(sigma2 * sw / det);
    fit.intercept_se = std::sqrt(sigma2 * swxx / det);
  }
  return fit;
}

double evaluate_fit(const ScalingFit& fit, double x) {
  switch (fit.model) {
    case ScalingModel::kAffine:
      return fit.intercept + fit.slope * x;
    case ScalingModel::kPowerLaw:
      return std::exp(fit.intercept) * std::pow(x, fit.slope);
    case ScalingModel::kExponential:
      return std::exp(fit.intercept + fit.slope * x);
  }
  return 0.0;
}

namespace {

const char* model_name(ScalingModel model) {
  switch (model) {
    case ScalingModel::kAffine: return "affine";
    case ScalingModel::kPowerLaw: return "power";
    case ScalingModel::kExponential: return "exponential";
  }
  return "affine";
}

}  // namespace

void save_scaling_csv(const std::vector<double>& grid,
                      const std::vector<double>& measured,
                      const std::vector<double>& se, const ScalingFit& fit,
                      const std::string& path) {
  if (grid.size() != measured.size() ||
      (!se.empty() && se.size() != grid.size())) {
    throw DimensionError("scaling export arrays disagree in length");
  }
  std::ostringstream out;
  out << "grid_value,measured,se,fitted,residual\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double fitted = evaluate_fit(fit, grid[i]);
    out << io::format_double(grid[i]) << ','
        << io::format_double(measured[i]) << ','
        << io::format_double(se.empty() ? 0.0 : se[i]) << ','
        << io::format_double(fitted) << ','
        << io::format_double(measured[i] - fitted) << '\n';
  }
  io::write_file(path, out.str());
}

std::string fit_to_json(const ScalingFit& fit) {
  std::ostringstream out;
  out << "{\"model\":\"" << model_name(fit.model) << "\""
      << ",\"intercept\":" << io::format_double(fit.intercept)
      << ",\"slope\":" << io::format_double(fit.slope)
      << ",\"intercept_se\":" << io::format_double(fit.intercept_se)
      << ",\"slope_se\":" << io::format_double(fit.slope_se)
      << ",\"residual_norm\":" << io::format_double(fit.residual_norm)
      << ",\"r_squared\":" << io::format_double(fit.r_squared) << "}";
  return out.str();
}

long default_warmup(double alpha, double mu_x) {
  if (!(alpha > 0.0) || !(mu_x > 0.0)) {
    throw ValidationError("warm-up rule needs alpha > 0 and mu_x > 0");
  }
  return static_cast<long>(std::ceil(10.0 / (alpha * mu_x)));
}

}  // namespace ttsa::stats
