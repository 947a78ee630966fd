#include "ttsa/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ttsa/errors.hpp"

namespace ttsa::spectral {

namespace {

void require_square(const Eigen::MatrixXd& a, const char* what) {
  if (a.rows() == 0 || a.rows() != a.cols()) {
    std::ostringstream os;
    os << what << " must be square and non-empty, got " << a.rows() << "x"
       << a.cols();
    throw DimensionError(os.str());
  }
  if (!a.allFinite()) {
    throw ValidationError(std::string(what) + " has non-finite entries");
  }
}

// kron(A, B) for the vectorized Lyapunov system.
Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

}  // namespace

HurwitzReport is_hurwitz(const Eigen::MatrixXd& a) {
  require_square(a, "matrix");
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) {
    throw Error("eigenvalue iteration failed to converge");
  }
  const double margin = es.eigenvalues().real().minCoeff();
  return HurwitzReport{margin > 0.0, margin};
}

LyapunovSolution solve_lyapunov(const Eigen::MatrixXd& a) {
  require_square(a, "matrix");
  const HurwitzReport h = is_hurwitz(a);
  if (!h.stable) {
    std::ostringstream os;
    os << "Lyapunov equation needs a stable matrix; stability margin is "
       << h.margin;
    throw StabilityError(os.str());
  }

  const Eigen::Index d = a.rows();
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(d, d);
  // vec(AᵀQ + QA) = (I ⊗ Aᵀ + Aᵀ ⊗ I) vec(Q) with column-major vec.
  const Eigen::MatrixXd at = a.transpose();
  const Eigen::MatrixXd m =
      kron(Eigen::MatrixXd::Identity(d, d), at) + kron(at, id);

  const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(id.data(), d * d);

  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  if (!lu.isInvertible()) {
    throw SingularityError("vectorized Lyapunov system is singular");
  }
  const Eigen::VectorXd vq = lu.solve(rhs);

  LyapunovSolution out;
  Eigen::MatrixXd q = Eigen::Map<const Eigen::MatrixXd>(vq.data(), d, d);
  q = 0.5 * (q + q.transpose()).eval();
  out.q = q;

  out.residual = (a.transpose() * q + q * a - id).norm();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const double smin = svd.singularValues()(svd.singularValues().size() - 1);
  out.condition = smin > 0.0 ? svd.singularValues()(0) / smin
                             : std::numeric_limits<double>::infinity();
  out.conditioning_warning = out.condition > 1e12;
  return out;
}

double schatten_norm(const Eigen::MatrixXd& a, SchattenOrder order) {
  if (a.size() == 0) throw DimensionError("Schatten norm of empty matrix");
  if (!a.allFinite()) throw ValidationError("matrix has non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& s = svd.singularValues();
  return order == SchattenOrder::kOne ? s.sum() : s(0);
}

double operator_norm(const Eigen::MatrixXd& a) {
  return schatten_norm(a, SchattenOrder::kInf);
}

double nuclear_norm(const Eigen::MatrixXd& a) {
  return schatten_norm(a, SchattenOrder::kOne);
}

double sigma_min(const Eigen::MatrixXd& a) {
  if (a.size() == 0) throw DimensionError("sigma_min of empty matrix");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

DerivedConstants derived_constants(const Eigen::MatrixXd& j11,
                                   const Eigen::MatrixXd& j12,
                                   const Eigen::MatrixXd& j21,
                                   const Eigen::MatrixXd& j22) {
  require_square(j11, "J11");
  require_square(j22, "J22");
  const Eigen::Index dx = j11.rows();
  const Eigen::Index dy = j22.rows();
  if (j12.rows() != dx || j12.cols() != dy || j21.rows() != dy ||
      j21.cols() != dx) {
    throw DimensionError("off-diagonal blocks do not match J11/J22 shapes");
  }
  if (!j12.allFinite() || !j21.allFinite()) {
    throw ValidationError("off-diagonal block has non-finite entries");
  }

  const double cond_j22 =
      sigma_min(j22) > 0.0 ? operator_norm(j22) / sigma_min(j22)
                           : std::numeric_limits<double>::infinity();
  if (!(cond_j22 < 1e12)) {
    throw SingularityError("J22 is singular or numerically singular");
  }

  DerivedConstants out;
  const Eigen::MatrixXd j22_inv_j21 =
      j22.partialPivLu().solve(Eigen::MatrixXd(j21));
  out.delta = j11 - j12 * j22_inv_j21;

  const HurwitzReport h22 = is_hurwitz(j22);
  out.margin_j22 = h22.margin;
  if (!h22.stable) {
    throw StabilityError("J22 is not stable (an eigenvalue has nonpositive "
                         "real part)");
  }
  const HurwitzReport hd = is_hurwitz(out.delta);
  out.margin_delta = hd.margin;
  if (!hd.stable) {
    throw StabilityError(
        "the Schur complement J11 - J12 J22^{-1} J21 is not stable");
  }

  const LyapunovSolution lx = solve_lyapunov(out.delta);
  const LyapunovSolution ly = solve_lyapunov(j22);
  out.q_x = lx.q;
  out.q_y = ly.q;
  out.conditioning_warning = lx.conditioning_warning || ly.conditioning_warning;

  SpectralConstants& c = out.constants;
  c.mu_x = 1.0 / operator_norm(lx.q);
  c.mu_y = 1.0 / operator_norm(ly.q);
  c.j_max = std::max({operator_norm(j11), operator_norm(j12),
                      operator_norm(j21), operator_norm(j22)});
  c.kappa_y = c.j_max / c.mu_y;
  c.kappa_x = c.kappa_y * c.j_max / c.mu_x;
  return out;
}

}  // namespace ttsa::spectral
