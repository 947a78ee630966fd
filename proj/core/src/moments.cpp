#include "ttsa/moments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ttsa/errors.hpp"

namespace ttsa::moments {

namespace {

using nlohmann::json;

Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

double spectral_radius(const Eigen::MatrixXd& m) {
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  if (es.info() != Eigen::Success) {
    throw Error("eigenvalue iteration failed on a moment operator");
  }
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Dense matrix of the conditional-moment update: block (to, from) scales a
// per-state statistic of size `block` by P(to|from) pi(from) / pi(to).
Eigen::MatrixXd balance_operator(const model::ProblemInstance& inst,
                                 const std::vector<Eigen::MatrixXd>& blocks) {
  const int n = inst.n_states();
  const Eigen::Index b = blocks[0].rows();
  Eigen::MatrixXd op = Eigen::MatrixXd::Zero(n * b, n * b);
  for (int to = 0; to < n; ++to) {
    for (int from = 0; from < n; ++from) {
      const double w = inst.markov.kernel(from, to) * inst.markov.pi(from) /
                       inst.markov.pi(to);
      if (w != 0.0) {
        op.block(to * b, from * b, b, b) =
            w * blocks[static_cast<std::size_t>(from)];
      }
    }
  }
  return op;
}

}  // namespace

LiftedSystem lift(const model::ProblemInstance& inst, double alpha,
                  double beta) {
  if (alpha < 0.0 || beta < 0.0 || !std::isfinite(alpha) ||
      !std::isfinite(beta)) {
    throw ValidationError("stepsizes must be nonnegative finite");
  }
  const Eigen::Index dx = inst.d_x;
  const Eigen::Index dy = inst.d_y;
  const Eigen::Index d = dx + dy;
  LiftedSystem sys;
  sys.alpha = alpha;
  sys.beta = beta;
  sys.a.reserve(static_cast<std::size_t>(inst.n_states()));
  sys.c.reserve(static_cast<std::size_t>(inst.n_states()));
  for (int s = 0; s < inst.n_states(); ++s) {
    const std::size_t k = static_cast<std::size_t>(s);
    Eigen::MatrixXd a(d, d);
    a.topLeftCorner(dx, dx) = Eigen::MatrixXd::Identity(dx, dx) -
                              alpha * (inst.j11 + inst.noise.w11[k]);
    a.topRightCorner(dx, dy) = -alpha * (inst.j12 + inst.noise.w12[k]);
    a.bottomLeftCorner(dy, dx) = -beta * (inst.j21 + inst.noise.w21[k]);
    a.bottomRightCorner(dy, dy) = Eigen::MatrixXd::Identity(dy, dy) -
                                  beta * (inst.j22 + inst.noise.w22[k]);
    Eigen::VectorXd c(d);
    c.head(dx) = -alpha * (inst.b1 + inst.noise.u1[k]);
    c.tail(dy) = -beta * (inst.b2 + inst.noise.u2[k]);
    sys.a.push_back(std::move(a));
    sys.c.push_back(std::move(c));
  }
  sys.radius_first = spectral_radius(balance_operator(inst, sys.a));
  if (sys.radius_first >= 1.0) {
    std::ostringstream os;
    os << "first-moment operator has spectral radius " << sys.radius_first
       << " >= 1; no stationary moments at these stepsizes";
    throw FeasibilityError(os.str());
  }
  return sys;
}

FirstMoments stationary_first_moments(const model::ProblemInstance& inst,
                                      double alpha, double beta) {
  const LiftedSystem sys = lift(inst, alpha, beta);
  const int n = inst.n_states();
  const Eigen::Index d = inst.d_x + inst.d_y;

  // Balance: pi(to) m(to) = sum_from P(to|from) pi(from) (A m + c)(from).
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(n * d, n * d);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n * d);
  for (int to = 0; to < n; ++to) {
    lhs.block(to * d, to * d, d, d) =
        inst.markov.pi(to) * Eigen::MatrixXd::Identity(d, d);
    for (int from = 0; from < n; ++from) {
      const double w = inst.markov.kernel(from, to) * inst.markov.pi(from);
      if (w == 0.0) continue;
      lhs.block(to * d, from * d, d, d) -=
          w * sys.a[static_cast<std::size_t>(from)];
      rhs.segment(to * d, d) += w * sys.c[static_cast<std::size_t>(from)];
    }
  }
  const Eigen::VectorXd sol = lhs.partialPivLu().solve(rhs);

  FirstMoments out;
  out.alpha = alpha;
  out.beta = beta;
  out.radius_first = sys.radius_first;
  out.residual_first =
      (lhs * sol - rhs).norm() / std::max(1.0, rhs.norm());
  out.m.reserve(static_cast<std::size_t>(n));
  out.mean = Eigen::VectorXd::Zero(d);
  for (int s = 0; s < n; ++s) {
    out.m.push_back(sol.segment(s * d, d));
    out.mean += inst.markov.pi(s) * out.m.back();
  }
  const Eigen::VectorXd mean_x = out.mean.head(inst.d_x);
  out.bias_x = mean_x - inst.x_star;
  out.bias_ybar = out.mean.tail(inst.d_y) - inst.y_star_of(mean_x);
  return out;
}

StationaryMoments stationary_second_moments(const model::ProblemInstance& inst,
                                            double alpha, double beta) {
  StationaryMoments out;
  out.first = stationary_first_moments(inst, alpha, beta);
  const LiftedSystem sys = lift(inst, alpha, beta);
  const int n = inst.n_states();
  const Eigen::Index d = inst.d_x + inst.d_y;
  const Eigen::Index dd = d * d;

  std::vector<Eigen::MatrixXd> aa;
  aa.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) {
    aa.push_back(kron(sys.a[static_cast<std::size_t>(s)],
                      sys.a[static_cast<std::size_t>(s)]));
  }
  out.radius_second = spectral_radius(balance_operator(inst, aa));
  if (out.radius_second >= 1.0) {
    std::ostringstream os;
    os << "second-moment operator has spectral radius " << out.radius_second
       << " >= 1; stationary covariance does not exist at these stepsizes";
    throw FeasibilityError(os.str());
  }

  // Balance with S(xi) = E[z z^T | xi]:
  // pi(to) S(to) = sum_from P(to|from) pi(from)
  //                (A S A^T + A m c^T + c m^T A^T + c c^T)(from).
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(n * dd, n * dd);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n * dd);
  for (int to = 0; to < n; ++to) {
    lhs.block(to * dd, to * dd, dd, dd) =
        inst.markov.pi(to) * Eigen::MatrixXd::Identity(dd, dd);
    for (int from = 0; from < n; ++from) {
      const double w = inst.markov.kernel(from, to) * inst.markov.pi(from);
      if (w == 0.0) continue;
      const std::size_t k = static_cast<std::size_t>(from);
      lhs.block(to * dd, from * dd, dd, dd) -= w * aa[k];
      const Eigen::MatrixXd amc = sys.a[k] * out.first.m[k] * sys.c[k].transpose();
      const Eigen::MatrixXd fixed =
          amc + amc.transpose() + sys.c[k] * sys.c[k].transpose();
      rhs.segment(to * dd, dd) +=
          w * Eigen::Map<const Eigen::VectorXd>(fixed.data(), dd);
    }
  }
  const Eigen::VectorXd sol = lhs.partialPivLu().solve(rhs);
  out.residual_second = (lhs * sol - rhs).norm() / std::max(1.0, rhs.norm());

  out.s.reserve(static_cast<std::size_t>(n));
  out.second = Eigen::MatrixXd::Zero(d, d);
  for (int s = 0; s < n; ++s) {
    Eigen::MatrixXd si =
        Eigen::Map<const Eigen::MatrixXd>(sol.data() + s * dd, d, d);
    si = 0.5 * (si + si.transpose()).eval();
    out.second += inst.markov.pi(s) * si;
    out.s.push_back(std::move(si));
  }
  out.cov = out.second - out.first.mean * out.first.mean.transpose();
  out.var_x_trace = out.cov.topLeftCorner(inst.d_x, inst.d_x).trace();
  out.var_y_trace = out.cov.bottomRightCorner(inst.d_y, inst.d_y).trace();
  return out;
}

BiasExpansion bias_expansion(const model::ProblemInstance& inst,
                             const std::vector<std::pair<double, double>>& grid) {
  if (grid.size() < 3) {
    throw DesignError("bias expansion needs at least three stepsize pairs");
  }
  const Eigen::Index npts = static_cast<Eigen::Index>(grid.size());
  Eigen::MatrixXd design(npts, 2);
  for (Eigen::Index i = 0; i < npts; ++i) {
    design(i, 0) = grid[static_cast<std::size_t>(i)].first;
    design(i, 1) = grid[static_cast<std::size_t>(i)].second;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < 2) {
    throw DesignError(
        "stepsize grid must vary alpha and beta independently for the "
        "expansion fit");
  }

  Eigen::MatrixXd bias_x(npts, inst.d_x), bias_y(npts, inst.d_y);
  for (Eigen::Index i = 0; i < npts; ++i) {
    const auto& [a, b] = grid[static_cast<std::size_t>(i)];
    const FirstMoments fm = stationary_first_moments(inst, a, b);
    bias_x.row(i) = fm.bias_x.transpose();
    bias_y.row(i) = fm.bias_ybar.transpose();
  }

  const Eigen::MatrixXd coef_x = qr.solve(bias_x);  // rows: (b1x; b2x)
  const Eigen::MatrixXd coef_y = qr.solve(bias_y);

  BiasExpansion out;
  out.b1x = coef_x.row(0).transpose();
  out.b2x = coef_x.row(1).transpose();
  out.b1y = coef_y.row(0).transpose();
  out.b2y = coef_y.row(1).transpose();
  const Eigen::MatrixXd res_x = bias_x - design * coef_x;
  const Eigen::MatrixXd res_y = bias_y - design * coef_y;
  for (Eigen::Index i = 0; i < npts; ++i) {
    out.residuals_x.push_back(res_x.row(i).norm());
    out.residuals_y.push_back(res_y.row(i).norm());
    out.max_residual_x = std::max(out.max_residual_x, out.residuals_x.back());
  }
  return out;
}

double extrapolation_residual(const model::ProblemInstance& inst, double alpha,
                              double beta) {
  const FirstMoments base = stationary_first_moments(inst, alpha, beta);
  const FirstMoments doubled =
      stationary_first_moments(inst, 2.0 * alpha, 2.0 * beta);
  return (2.0 * base.bias_x - doubled.bias_x).norm();
}

std::string to_json(const StationaryMoments& m) {
  json j;
  j["alpha"] = m.first.alpha;
  j["beta"] = m.first.beta;
  j["bias_x"] = std::vector<double>(m.first.bias_x.data(),
                                    m.first.bias_x.data() + m.first.bias_x.size());
  j["bias_ybar"] =
      std::vector<double>(m.first.bias_ybar.data(),
                          m.first.bias_ybar.data() + m.first.bias_ybar.size());
  j["var_x_trace"] = m.var_x_trace;
  j["var_y_trace"] = m.var_y_trace;
  j["spectral_radius"] = m.first.radius_first;
  j["spectral_radius_second"] = m.radius_second;
  j["residuals"] = {{"first", m.first.residual_first},
                    {"second", m.residual_second}};
  return j.dump(1);
}

void save_moments_json(const StationaryMoments& moments,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << to_json(moments) << '\n';
}

}  // namespace ttsa::moments
