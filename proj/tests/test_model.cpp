// Instance assembly, fixed points, noise centering, stepsize labels,
// generator determinism, and the JSON round trip.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include <Eigen/Dense>

#include "ttsa/errors.hpp"
#include "ttsa/markov_chain.hpp"
#include "ttsa/model.hpp"
#include "ttsa/rng.hpp"

using namespace ttsa;

namespace {

chain::MarkovChain flat_chain(int n) {
  return chain::build_chain(Eigen::MatrixXd::Constant(n, n, 1.0 / n));
}

model::NoiseField zero_noise(int n, int dx, int dy) {
  model::NoiseField f;
  for (int s = 0; s < n; ++s) {
    f.w11.push_back(Eigen::MatrixXd::Zero(dx, dx));
    f.w12.push_back(Eigen::MatrixXd::Zero(dx, dy));
    f.w21.push_back(Eigen::MatrixXd::Zero(dy, dx));
    f.w22.push_back(Eigen::MatrixXd::Zero(dy, dy));
    f.u1.push_back(Eigen::VectorXd::Zero(dx));
    f.u2.push_back(Eigen::VectorXd::Zero(dy));
  }
  return f;
}

}  // namespace

TEST_CASE("homogeneous decoupled system has a zero fixed point") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  const auto inst = model::assemble_instance(
      i2, Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2), i2,
      Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), flat_chain(2),
      zero_noise(2, 2, 2));
  CHECK(inst.x_star.norm() == 0.0);
  CHECK(inst.y_star.norm() == 0.0);
  CHECK(inst.sigma_x == 0.0);
  CHECK(inst.sigma_y == 0.0);
}

TEST_CASE("hand-solved fixed point") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd b1(2), b2(2);
  b1 << 1.0, 0.0;
  b2.setZero();
  const auto inst = model::assemble_instance(2.0 * i2, i2, i2, i2, b1, b2,
                                             flat_chain(2),
                                             zero_noise(2, 2, 2));
  CHECK((inst.derived.delta - i2).norm() < 1e-13);
  CHECK((inst.x_star - Eigen::Vector2d(-1.0, 0.0)).norm() < 1e-12);
  CHECK((inst.y_star - Eigen::Vector2d(1.0, 0.0)).norm() < 1e-12);

  const auto ops =
      model::evaluate_operators(inst, inst.x_star, inst.y_star, 0);
  CHECK(ops.f.norm() <=
        1e-10 * (1.0 + inst.b1.norm() + inst.b2.norm()));
  CHECK(ops.g.norm() <=
        1e-10 * (1.0 + inst.b1.norm() + inst.b2.norm()));
}

TEST_CASE("noise is recentered on ingest") {
  auto noise = zero_noise(2, 2, 2);
  noise.w11[0] << 1.0, 0.2, 0.0, 1.0;  // deliberately biased block
  noise.w11[1] << 0.5, 0.0, 0.1, 0.5;
  noise.u1[0] << 3.0, -1.0;
  noise.u1[1] << 3.0, -1.0;
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  const auto inst = model::assemble_instance(
      i2, Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2), i2,
      Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), flat_chain(2),
      noise);

  Eigen::MatrixXd mean_w = Eigen::MatrixXd::Zero(2, 2);
  Eigen::VectorXd mean_u = Eigen::VectorXd::Zero(2);
  for (int s = 0; s < 2; ++s) {
    mean_w += inst.markov.pi(s) * inst.noise.w11[s];
    mean_u += inst.markov.pi(s) * inst.noise.u1[s];
  }
  CHECK(mean_w.norm() <= 1e-12);
  CHECK(mean_u.norm() <= 1e-12);
}

TEST_CASE("degenerate dimensions are rejected") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  CHECK_THROWS_AS(model::assemble_instance(
                      Eigen::MatrixXd::Zero(0, 0), Eigen::MatrixXd::Zero(0, 2),
                      Eigen::MatrixXd::Zero(2, 0), i2, Eigen::VectorXd::Zero(0),
                      Eigen::VectorXd::Zero(2), flat_chain(2),
                      zero_noise(2, 0, 2)),
                  DimensionError);
  CHECK_THROWS_AS(model::random_instance(0, 2, 4, 1), DimensionError);
}

TEST_CASE("stepsize margins at the exact boundary") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  const auto inst = model::assemble_instance(
      i2, Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2), i2,
      Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), flat_chain(2),
      zero_noise(2, 2, 2));
  const auto& k = inst.constants();
  // Rank-one kernel: rho = 0, tau = 1, so beta equal to the first budget
  // sits exactly on the boundary.
  const double bound = 1.0 / (k.j_max * k.kappa_y * k.kappa_y * k.kappa_x *
                              k.kappa_x);
  const auto report = model::validate_stepsizes(inst, bound / 2.0, bound);
  CHECK(report.tau == 1);
  CHECK(report.m1 == 0.0);
  CHECK(report.feasible);
}

TEST_CASE("equal stepsizes fail the ratio budget on a conditioned instance") {
  const auto inst = model::random_instance(2, 2, 10, 54);
  const auto& k = inst.constants();
  REQUIRE(k.kappa_y * k.kappa_y * k.kappa_y * k.kappa_x > 1.0);
  const auto report = model::validate_stepsizes(inst, 0.01, 0.01);
  CHECK(report.m2 < 0.0);
  CHECK_FALSE(report.feasible);

  // Paper-scale pair on the same instance: margins are reported either way.
  const auto paper = model::validate_stepsizes(inst, 3e-4, 0.02);
  CHECK(paper.feasible == (paper.m1 >= 0.0 && paper.m2 >= 0.0));
  CHECK(paper.tau >= 1);
}

TEST_CASE("generator honors the coupling knob and pinned eigenvalues") {
  model::InstanceParams params;
  params.coupling_scale = 0.0;
  const auto dec = model::random_instance(2, 2, 4, 9, params);
  CHECK(dec.j12.norm() == 0.0);
  CHECK(dec.j21.norm() == 0.0);
  CHECK((dec.derived.delta - dec.j11).norm() == 0.0);

  model::InstanceParams pinned;
  pinned.eig_delta_lo = 1.0;
  pinned.eig_delta_hi = 1.0;
  const auto scalar = model::random_instance(1, 1, 3, 2, pinned);
  CHECK(scalar.derived.delta(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("generated instances satisfy the structural invariants") {
  for (std::uint64_t seed : {1ull, 54ull, 1234ull}) {
    const auto inst = model::random_instance(2, 2, 10, seed);

    const auto ops = model::evaluate_operators(inst, inst.x_star, inst.y_star, 0);
    CHECK(ops.f.norm() + ops.g.norm() <=
          1e-10 * (1.0 + inst.b1.norm() + inst.b2.norm()));

    for (int s = 0; s < inst.n_states(); ++s) {
      CHECK(inst.noise.w11[s].operatorNorm() <=
            inst.constants().j_max + 1e-12);
      CHECK(inst.noise.w22[s].operatorNorm() <=
            inst.constants().j_max + 1e-12);
    }

    Eigen::MatrixXd mean_w12 = Eigen::MatrixXd::Zero(2, 2);
    Eigen::VectorXd mean_u2 = Eigen::VectorXd::Zero(2);
    double sigma_x = 0.0;
    for (int s = 0; s < inst.n_states(); ++s) {
      mean_w12 += inst.markov.pi(s) * inst.noise.w12[s];
      mean_u2 += inst.markov.pi(s) * inst.noise.u2[s];
      sigma_x = std::max(sigma_x, (inst.noise.w11[s] * inst.x_star +
                                   inst.noise.w12[s] * inst.y_star +
                                   inst.noise.u1[s])
                                      .norm());
    }
    CHECK(mean_w12.norm() <= 1e-12);
    CHECK(mean_u2.norm() <= 1e-12);
    CHECK(inst.sigma_x == doctest::Approx(sigma_x).epsilon(1e-14));
  }
}

TEST_CASE("generator is deterministic in the seed") {
  const auto a = model::random_instance(2, 2, 10, 54);
  const auto b = model::random_instance(2, 2, 10, 54);
  CHECK(model::to_json(a) == model::to_json(b));
  const auto c = model::random_instance(2, 2, 10, 55);
  CHECK(model::to_json(a) != model::to_json(c));
}

TEST_CASE("operator evaluation matches an independent product") {
  const auto inst = model::random_instance(3, 2, 5, 7);
  rng::Stream s(rng::split(3, 3));
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::VectorXd x = s.gaussian_vector(3);
    const Eigen::VectorXd y = s.gaussian_vector(2);
    const int xi = static_cast<int>(s.next_u64() % 5);
    const auto ops = model::evaluate_operators(inst, x, y, xi);
    CHECK((ops.f - (inst.j11 * x + inst.j12 * y + inst.b1)).norm() == 0.0);
    CHECK((ops.g - (inst.j21 * x + inst.j22 * y + inst.b2)).norm() == 0.0);
    CHECK((ops.wx - (inst.noise.w11[xi] * x + inst.noise.w12[xi] * y +
                     inst.noise.u1[xi]))
              .norm() == 0.0);
    CHECK((ops.wy - (inst.noise.w21[xi] * x + inst.noise.w22[xi] * y +
                     inst.noise.u2[xi]))
              .norm() == 0.0);
  }
  CHECK_THROWS_AS(model::evaluate_operators(inst, Eigen::VectorXd::Zero(3),
                                            Eigen::VectorXd::Zero(2), 5),
                  ValidationError);
}

TEST_CASE("frozen-slow equilibrium solves g exactly") {
  const auto inst = model::random_instance(2, 3, 6, 11);
  rng::Stream s(rng::split(4, 4));
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::VectorXd x = 3.0 * s.gaussian_vector(2);
    const Eigen::VectorXd y = inst.y_star_of(x);
    CHECK((inst.j21 * x + inst.j22 * y + inst.b2).norm() <= 1e-10);
  }
}

TEST_CASE("json round trip reproduces every derived constant") {
  const auto inst = model::random_instance(2, 2, 10, 54);
  const std::string path = "model_roundtrip_test.json";
  model::save_instance(inst, path);
  const auto back = model::load_instance(path);
  std::remove(path.c_str());

  CHECK(model::to_json(back) == model::to_json(inst));
  CHECK((back.derived.q_x.array() == inst.derived.q_x.array()).all());
  CHECK((back.derived.q_y.array() == inst.derived.q_y.array()).all());
  CHECK(back.constants().mu_x == inst.constants().mu_x);
  CHECK(back.constants().kappa_x == inst.constants().kappa_x);
  CHECK(back.sigma_x == inst.sigma_x);
  CHECK(back.sigma_y == inst.sigma_y);
  CHECK((back.x_star.array() == inst.x_star.array()).all());
}
