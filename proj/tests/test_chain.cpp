// Kernel validation, stationary distributions, mixing constants, sampling.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include <Eigen/Dense>

#include "ttsa/errors.hpp"
#include "ttsa/markov_chain.hpp"
#include "ttsa/rng.hpp"

using namespace ttsa;

TEST_CASE("reducible and periodic kernels are rejected") {
  CHECK_THROWS_AS(chain::build_chain(Eigen::MatrixXd::Identity(2, 2)),
                  ErgodicityError);
  Eigen::MatrixXd flip(2, 2);
  flip << 0.0, 1.0, 1.0, 0.0;
  CHECK_THROWS_AS(chain::build_chain(flip), ErgodicityError);
  Eigen::MatrixXd neg(2, 2);
  neg << 1.2, -0.2, 0.5, 0.5;
  CHECK_THROWS_AS(chain::build_chain(neg), ValidationError);
}

TEST_CASE("rank-one kernel mixes in one step") {
  Eigen::MatrixXd k(2, 2);
  k << 0.5, 0.5, 0.5, 0.5;
  const auto c = chain::build_chain(k);
  CHECK(c.pi(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(c.pi(1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(c.rho <= 1e-12);
}

TEST_CASE("random positive kernel: stationarity and tv decay") {
  const auto c = chain::random_chain(10, 77, 0.01);

  const Eigen::VectorXd balance = c.kernel.transpose() * c.pi - c.pi;
  CHECK(balance.lpNorm<Eigen::Infinity>() < 1e-10);
  CHECK(c.pi.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(c.pi.minCoeff() > 0.0);

  // Assumption-style bound ||P^n d - pi||_1 <= c_rho rho^n on point masses,
  // checked by explicit kernel powers.
  long tau = 1;
  while (std::pow(c.rho, static_cast<double>(tau)) >= 1e-6 && tau < 4000) ++tau;
  Eigen::MatrixXd pn = Eigen::MatrixXd::Identity(10, 10);
  for (long n = 1; n <= 3 * tau; ++n) {
    pn = pn * c.kernel;
    for (int i = 0; i < 10; ++i) {
      const double tv = (pn.row(i).transpose() - c.pi).lpNorm<1>();
      CHECK(tv <= c.c_rho * std::pow(c.rho, static_cast<double>(n)) + 1e-10);
    }
  }
}

TEST_CASE("random chain determinism and entry floor") {
  const auto a = chain::random_chain(10, 42, 0.01);
  const auto b = chain::random_chain(10, 42, 0.01);
  CHECK((a.kernel.array() == b.kernel.array()).all());
  CHECK(a.kernel.minCoeff() >= 0.01);

  const auto other = chain::random_chain(10, 43, 0.01);
  CHECK_FALSE((a.kernel.array() == other.kernel.array()).all());
}

TEST_CASE("singleton and near-uniform chains") {
  const auto one = chain::random_chain(1, 5, 0.5);
  CHECK(one.kernel(0, 0) == 1.0);
  CHECK(one.pi(0) == 1.0);
  CHECK(one.rho == 0.0);

  // Entries >= 0.4 on two states force |1 - p - q| <= 0.2.
  const auto near = chain::random_chain(2, 11, 0.4);
  CHECK(near.rho <= 0.2 + 1e-12);
}

TEST_CASE("infeasible entry floor is rejected") {
  CHECK_THROWS_AS(chain::random_chain(10, 1, 0.2), ValidationError);
  CHECK_THROWS_AS(chain::random_chain(4, 1, 0.0), ValidationError);
}

TEST_CASE("mixing time closed forms") {
  chain::MarkovChain c;
  c.rho = 0.5;
  c.c_rho = 1.0;
  CHECK(chain::mixing_time(c, std::pow(2.0, -10.0), 1.0).tau == 10);

  c.rho = 0.0;
  CHECK(chain::mixing_time(c, 1e-4, 1.0).tau == 1);

  c.rho = 0.9;
  c.c_rho = 2.0;
  CHECK(chain::mixing_time(c, 1e-4, 1.0).tau == 94);

  c.rho = 0.5;
  c.c_rho = 1.0;
  const auto capped = chain::mixing_time(c, 2.0, 1.0);
  CHECK(capped.tau == 1);
  CHECK(capped.capped);
}

TEST_CASE("sampler determinism and seed sensitivity") {
  const auto c = chain::random_chain(6, 21, 0.02);
  chain::ChainSampler s1(c, rng::Stream(rng::split(9, 0)), 0);
  chain::ChainSampler s2(c, rng::Stream(rng::split(9, 0)), 0);
  chain::ChainSampler s3(c, rng::Stream(rng::split(10, 0)), 0);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const int a = s1.step();
    CHECK(a == s2.step());
    differs = differs || (a != s3.step());
  }
  CHECK(differs);
}

TEST_CASE("sampler long-run frequencies match the stationary law") {
  const auto c = chain::random_chain(5, 33, 0.02);
  auto sampler = chain::ChainSampler::from_stationary(
      c, rng::Stream(rng::split(123, 0)));
  const long n = 1000000;
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(5);
  for (long i = 0; i < n; ++i) counts(sampler.step()) += 1.0;
  for (int i = 0; i < 5; ++i) {
    const double p = c.pi(i);
    const double band = 3.0 * std::sqrt(p * (1.0 - p) / n);
    CHECK(std::abs(counts(i) / n - p) <= band);
  }
}

TEST_CASE("kernel csv round trip") {
  const auto c = chain::random_chain(4, 8, 0.03);
  const std::string path = "chain_kernel_test.csv";
  chain::save_kernel_csv(c.kernel, path);
  const Eigen::MatrixXd back = chain::load_kernel_csv(path);
  CHECK((back.array() == c.kernel.array()).all());
  std::remove(path.c_str());
}
