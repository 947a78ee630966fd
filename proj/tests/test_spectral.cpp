// Stability tests, Lyapunov solves, Schatten norms, derived constants.
// Reference values come from closed forms or from independent routes coded
// here (Kronecker solve, Jacobi SVD, power iteration), never from the
// library functions under test.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "ttsa/errors.hpp"
#include "ttsa/rng.hpp"
#include "ttsa/spectral.hpp"

using namespace ttsa;

namespace {

Eigen::MatrixXd random_matrix(rng::Stream& s, int rows, int cols) {
  return s.gaussian_matrix(rows, cols);
}

// Q-less one-sided Jacobi: rotates columns until pairwise orthogonal, then
// singular values are the column norms.
std::vector<double> jacobi_singular_values(Eigen::MatrixXd a) {
  const Eigen::Index n = a.cols();
  for (int sweep = 0; sweep < 60; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n - 1; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a.col(p).dot(a.col(q));
        const double app = a.col(p).squaredNorm();
        const double aqq = a.col(q).squaredNorm();
        off = std::max(off, std::abs(apq));
        if (std::abs(apq) < 1e-15 * std::sqrt(app * aqq) || apq == 0.0) continue;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double sv = c * t;
        const Eigen::VectorXd colp = a.col(p);
        a.col(p) = c * colp - sv * a.col(q);
        a.col(q) = sv * colp + c * a.col(q);
      }
    }
    if (off < 1e-14) break;
  }
  std::vector<double> sv;
  for (Eigen::Index j = 0; j < n; ++j) sv.push_back(a.col(j).norm());
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

double power_iteration_norm(const Eigen::MatrixXd& sym, int iters = 2000) {
  rng::Stream s(rng::split(99, 0));
  Eigen::VectorXd v = s.gaussian_vector(sym.rows());
  v.normalize();
  double lambda = 0.0;
  for (int i = 0; i < iters; ++i) {
    Eigen::VectorXd w = sym * v;
    lambda = w.norm();
    if (lambda == 0.0) return 0.0;
    v = w / lambda;
  }
  return lambda;
}

}  // namespace

TEST_CASE("hurwitz report on closed-form matrices") {
  Eigen::MatrixXd a(2, 2);
  a << 0.5, 0.0, 0.0, 0.5;
  auto r = spectral::is_hurwitz(a);
  CHECK(r.stable);
  CHECK(r.margin == doctest::Approx(0.5).epsilon(1e-12));

  Eigen::MatrixXd rot(2, 2);
  rot << 0.0, 1.0, -1.0, 0.0;
  r = spectral::is_hurwitz(rot);
  CHECK_FALSE(r.stable);
  CHECK(std::abs(r.margin) <= 1e-8);
}

TEST_CASE("hurwitz margin via similarity-constructed spectrum") {
  Eigen::MatrixXd d = Eigen::Vector2d(0.3, 0.7).asDiagonal();
  Eigen::MatrixXd s(2, 2);
  s << 1.0, 2.0, -1.0, 1.5;
  const Eigen::MatrixXd a = s * d * s.inverse();
  auto r = spectral::is_hurwitz(a);
  CHECK(r.stable);
  CHECK(r.margin == doctest::Approx(0.3).epsilon(1e-8));
}

TEST_CASE("hurwitz rejects non-square input") {
  CHECK_THROWS_AS(spectral::is_hurwitz(Eigen::MatrixXd::Zero(2, 3)),
                  DimensionError);
}

TEST_CASE("lyapunov closed forms") {
  const auto half = spectral::solve_lyapunov(0.5 *
                                             Eigen::MatrixXd::Identity(2, 2));
  CHECK((half.q - Eigen::MatrixXd::Identity(2, 2)).norm() < 1e-12);

  const auto diag =
      spectral::solve_lyapunov(Eigen::Vector2d(1.0, 2.0).asDiagonal());
  CHECK(diag.q(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(diag.q(1, 1) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(std::abs(diag.q(0, 1)) < 1e-12);
}

TEST_CASE("lyapunov against an independent kronecker solve") {
  Eigen::MatrixXd a(2, 2);
  a << 1.0, 1.0, 0.0, 1.0;
  const auto sol = spectral::solve_lyapunov(a);

  // (I (x) A^T + A^T (x) I) vec(Q) = vec(I), assembled by hand.
  const Eigen::MatrixXd at = a.transpose();
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int p = 0; p < 2; ++p)
        for (int q = 0; q < 2; ++q) {
          // vec is column-major: entry (p,i) of Q sits at index i*2+p.
          const int row = j * 2 + q;
          const int col = i * 2 + p;
          double v = 0.0;
          if (i == j) v += at(q, p);
          if (p == q) v += at(j, i);
          k(row, col) += v;
        }
  Eigen::VectorXd vec_i(4);
  vec_i << 1.0, 0.0, 0.0, 1.0;
  const Eigen::VectorXd vq = k.fullPivLu().solve(vec_i);
  Eigen::MatrixXd q_ref(2, 2);
  q_ref << vq(0), vq(2), vq(1), vq(3);
  q_ref = 0.5 * (q_ref + q_ref.transpose().eval());

  CHECK((sol.q - q_ref).norm() < 1e-10);
  const Eigen::MatrixXd res =
      a.transpose() * sol.q + sol.q * a - Eigen::MatrixXd::Identity(2, 2);
  CHECK(res.norm() <= 1e-10 * std::max(1.0, sol.q.norm()));
}

TEST_CASE("lyapunov solutions are symmetric positive definite") {
  rng::Stream s(rng::split(17, 0));
  for (int trial = 0; trial < 25; ++trial) {
    const int d = 1 + static_cast<int>(s.next_u64() % 8);
    Eigen::MatrixXd m = random_matrix(s, d, d);
    const Eigen::MatrixXd a =
        m + (m.norm() + 0.2) * Eigen::MatrixXd::Identity(d, d);
    const auto sol = spectral::solve_lyapunov(a);
    CHECK((sol.q - sol.q.transpose().eval()).norm() == 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sol.q);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    const Eigen::MatrixXd res =
        a.transpose() * sol.q + sol.q * a - Eigen::MatrixXd::Identity(d, d);
    CHECK(res.norm() <= 1e-10 * std::max(1.0, sol.q.norm()));
  }
}

TEST_CASE("lyapunov refuses unstable input") {
  Eigen::MatrixXd a(2, 2);
  a << -1.0, 0.0, 0.0, 1.0;
  CHECK_THROWS_AS(spectral::solve_lyapunov(a), StabilityError);
}

TEST_CASE("schatten norms on closed forms") {
  const Eigen::MatrixXd d = Eigen::Vector2d(3.0, 4.0).asDiagonal();
  CHECK(spectral::schatten_norm(d, spectral::SchattenOrder::kOne) ==
        doctest::Approx(7.0).epsilon(1e-12));
  CHECK(spectral::schatten_norm(d, spectral::SchattenOrder::kInf) ==
        doctest::Approx(4.0).epsilon(1e-12));

  Eigen::Vector3d u(1.0, 2.0, -2.0), v(2.0, -1.0, 2.0);
  u.normalize();
  v.normalize();
  const Eigen::MatrixXd rank1 = u * v.transpose();
  CHECK(spectral::nuclear_norm(rank1) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(spectral::operator_norm(rank1) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("schatten norms against an independent jacobi svd") {
  rng::Stream s(rng::split(23, 1));
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::MatrixXd a = random_matrix(s, 3, 3);
    const auto sv = jacobi_singular_values(a);
    const double nuc = sv[0] + sv[1] + sv[2];
    CHECK(spectral::nuclear_norm(a) == doctest::Approx(nuc).epsilon(1e-9));
    CHECK(spectral::operator_norm(a) == doctest::Approx(sv[0]).epsilon(1e-9));
    CHECK(spectral::sigma_min(a) == doctest::Approx(sv[2]).epsilon(1e-8));
    CHECK(spectral::nuclear_norm(a) >= spectral::operator_norm(a) - 1e-12);
  }
}

TEST_CASE("trace holder inequality") {
  rng::Stream s(rng::split(29, 2));
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::MatrixXd a = random_matrix(s, 4, 4);
    const Eigen::MatrixXd b = random_matrix(s, 4, 4);
    const double tr = (a.transpose() * b).trace();
    CHECK(tr <= spectral::operator_norm(a) * spectral::nuclear_norm(b) + 1e-10);
  }
}

TEST_CASE("derived constants on the decoupled identity system") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  const auto d = spectral::derived_constants(i2, Eigen::MatrixXd::Zero(2, 2),
                                             Eigen::MatrixXd::Zero(2, 2), i2);
  CHECK((d.delta - i2).norm() < 1e-14);
  CHECK((d.q_x - 0.5 * i2).norm() < 1e-12);
  CHECK((d.q_y - 0.5 * i2).norm() < 1e-12);
  CHECK(d.constants.mu_x == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(d.constants.mu_y == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(d.constants.j_max == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("schur complement algebra") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  const auto d = spectral::derived_constants(2.0 * i2, i2, i2, i2);
  CHECK((d.delta - i2).norm() < 1e-13);
}

TEST_CASE("derived constants cross-checked by power iteration") {
  rng::Stream s(rng::split(31, 3));
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::MatrixXd m11 = random_matrix(s, 2, 2);
    Eigen::MatrixXd m22 = random_matrix(s, 2, 2);
    const Eigen::MatrixXd j11 =
        m11 + (m11.norm() + 0.5) * Eigen::MatrixXd::Identity(2, 2);
    const Eigen::MatrixXd j22 =
        m22 + (m22.norm() + 0.5) * Eigen::MatrixXd::Identity(2, 2);
    const Eigen::MatrixXd j12 = 0.2 * random_matrix(s, 2, 2);
    const Eigen::MatrixXd j21 = 0.2 * random_matrix(s, 2, 2);
    spectral::DerivedConstants d;
    try {
      d = spectral::derived_constants(j11, j12, j21, j22);
    } catch (const StabilityError&) {
      continue;  // random coupling can destabilize the complement
    }
    const double qx_norm = power_iteration_norm(d.q_x);
    CHECK(d.constants.mu_x == doctest::Approx(1.0 / qx_norm).epsilon(1e-7));

    // Stated relations between the conditioning constants.
    CHECK(spectral::sigma_min(d.delta) >= d.constants.mu_x / 2.0 - 1e-10);
    CHECK(spectral::sigma_min(d.q_x) >=
          0.5 / spectral::operator_norm(d.delta) - 1e-10);
    CHECK(d.constants.kappa_y >=
          1.0 - 1e-12 * (d.constants.j_max >= d.constants.mu_y ? 0.0 : 1.0));
  }
}

TEST_CASE("derived constants error taxonomy") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(
      spectral::derived_constants(i2, i2, i2, Eigen::MatrixXd::Zero(2, 2)),
      SingularityError);
  try {
    spectral::derived_constants(i2, i2, i2, -i2);
    FAIL("expected a stability error");
  } catch (const StabilityError& e) {
    CHECK(std::string(e.what()).find("J22") != std::string::npos);
  }
  try {
    spectral::derived_constants(-i2, Eigen::MatrixXd::Zero(2, 2),
                                Eigen::MatrixXd::Zero(2, 2), i2);
    FAIL("expected a stability error");
  } catch (const StabilityError& e) {
    CHECK(std::string(e.what()).find("Schur complement") != std::string::npos);
  }
}
