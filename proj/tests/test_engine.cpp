// Trajectory simulation: fixed-point invariance, closed-form contraction,
// centered/raw equivalence, ensemble determinism, coupling, divergence
// flagging, and the streaming tail averages.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ttsa/engine.hpp"
#include "ttsa/errors.hpp"
#include "ttsa/markov_chain.hpp"
#include "ttsa/model.hpp"
#include "ttsa/rng.hpp"
#include "ttsa/stats.hpp"

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

model::ProblemInstance decoupled_identity() {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  return model::assemble_instance(
      i2, Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2), i2,
      Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2), flat_chain(2),
      zero_noise(2, 2, 2));
}

// Joint one-step matrix of the noiseless recursion.
Eigen::MatrixXd joint_step(const model::ProblemInstance& inst, double alpha,
                           double beta) {
  const Eigen::Index dx = inst.d_x, dy = inst.d_y;
  Eigen::MatrixXd m(dx + dy, dx + dy);
  m.topLeftCorner(dx, dx) =
      Eigen::MatrixXd::Identity(dx, dx) - alpha * inst.j11;
  m.topRightCorner(dx, dy) = -alpha * inst.j12;
  m.bottomLeftCorner(dy, dx) = -beta * inst.j21;
  m.bottomRightCorner(dy, dy) =
      Eigen::MatrixXd::Identity(dy, dy) - beta * inst.j22;
  return m;
}

}  // namespace

TEST_CASE("fixed point is exactly invariant without noise") {
  const auto inst = decoupled_identity();
  engine::SimConfig cfg;
  cfg.alpha = 0.05;
  cfg.beta = 0.1;
  cfg.n_steps = 500;
  cfg.seed = 3;
  cfg.initial = engine::InitialCondition::fixed(inst.x_star, inst.y_star, 0);
  const auto traj = engine::simulate(inst, cfg);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    CHECK(traj.x_at(i).norm() == 0.0);
    CHECK(traj.y_at(i).norm() == 0.0);
  }
}

TEST_CASE("noiseless run matches the matrix-power recursion and contracts") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd j12(2, 2), j21(2, 2);
  j12 << 0.3, 0.0, 0.1, 0.2;
  j21 << 0.2, 0.1, 0.0, 0.3;
  Eigen::VectorXd b1(2), b2(2);
  b1 << 0.7, -0.4;
  b2 << 0.2, 0.5;
  const auto inst = model::assemble_instance(2.0 * i2, j12, j21, i2, b1, b2,
                                             flat_chain(3),
                                             zero_noise(3, 2, 2));

  engine::SimConfig cfg;
  cfg.alpha = 0.05;
  cfg.beta = 0.1;
  const double mu_x = inst.constants().mu_x;
  cfg.n_steps = static_cast<long>(std::ceil(40.0 / (cfg.alpha * mu_x)));
  cfg.record_every = 1;
  cfg.seed = 5;
  Eigen::VectorXd x0(2), y0(2);
  x0 << 1.3, -0.8;
  y0 << 0.4, 2.1;
  cfg.initial = engine::InitialCondition::fixed(x0, y0, 0);
  const auto traj = engine::simulate(inst, cfg);

  const Eigen::MatrixXd m = joint_step(inst, cfg.alpha, cfg.beta);
  Eigen::VectorXd g(4), z(4);
  g.head(2) = -cfg.alpha * b1;
  g.tail(2) = -cfg.beta * b2;
  z.head(2) = x0;
  z.tail(2) = y0;
  for (long t = 0; t < cfg.n_steps; ++t) z = m * z + g;

  const std::size_t last = traj.size() - 1;
  CHECK((traj.x_at(last) - z.head(2)).norm() < 1e-9);
  CHECK((traj.y_at(last) - z.tail(2)).norm() < 1e-9);
  CHECK((traj.x_at(last) - inst.x_star).norm() <= 1e-6);
}

TEST_CASE("single-state chains carry no noise") {
  model::NoiseField noise = zero_noise(1, 2, 2);
  noise.w11[0] << 0.4, 0.0, 0.0, 0.4;  // centered away at ingest
  noise.u1[0] << 1.0, -2.0;
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd b1(2);
  b1 << 0.3, 0.1;
  const auto inst = model::assemble_instance(
      i2, Eigen::MatrixXd::Zero(2, 2), Eigen::MatrixXd::Zero(2, 2), i2, b1,
      Eigen::VectorXd::Zero(2), flat_chain(1), noise);
  CHECK(inst.sigma_x == 0.0);

  engine::SimConfig cfg;
  cfg.alpha = 0.05;
  cfg.beta = 0.1;
  cfg.n_steps = 2000;
  cfg.seed = 8;
  cfg.initial = engine::InitialCondition::fixed(inst.x_star, inst.y_star, 0);
  const auto traj = engine::simulate(inst, cfg);
  CHECK((traj.x_at(traj.size() - 1) - inst.x_star).norm() == 0.0);
}

TEST_CASE("one raw step agrees with the operator evaluation") {
  const auto inst = model::random_instance(1, 1, 2, 19);
  engine::SimConfig cfg;
  cfg.alpha = 0.02;
  cfg.beta = 0.2;
  cfg.n_steps = 1;
  cfg.record_every = 1;
  cfg.seed = 31;
  Eigen::VectorXd x0(1), y0(1);
  x0 << 0.9;
  y0 << -1.1;
  cfg.initial = engine::InitialCondition::fixed(x0, y0, 1);
  const auto traj = engine::simulate(inst, cfg);
  REQUIRE(traj.size() == 2);
  CHECK(traj.xi[0] == 1);

  const auto ops = model::evaluate_operators(inst, x0, y0, traj.xi[0]);
  const Eigen::VectorXd x1 = x0 - cfg.alpha * (ops.f + ops.wx);
  const Eigen::VectorXd y1 = y0 - cfg.beta * (ops.g + ops.wy);
  CHECK((traj.x_at(1) - x1).norm() <= 1e-14);
  CHECK((traj.y_at(1) - y1).norm() <= 1e-14);
}

TEST_CASE("centered recursion reconstructs the raw one") {
  const auto inst = model::random_instance(2, 2, 10, 54);
  engine::SimConfig cfg;
  cfg.alpha = 3e-4;
  cfg.beta = 0.02;
  cfg.n_steps = 1000000;
  cfg.record_every = 0;  // dense early, stride 10 later
  cfg.seed = 97;
  cfg.initial = engine::InitialCondition::ball(1.0);

  const auto raw = engine::simulate(inst, cfg);
  const auto centered = engine::simulate_centered(inst, cfg);
  REQUIRE(raw.size() == centered.size());

  double scale = 1.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    scale = std::max(scale, 1.0 + raw.x_at(i).norm());
  }
  CHECK(raw.xi == centered.xi);
  double worst_x = 0.0, worst_y = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const Eigen::VectorXd x_rec = centered.x_at(i) + inst.x_star;
    const Eigen::VectorXd y_rec = centered.y_at(i) + inst.y_star_of(x_rec);
    worst_x = std::max(worst_x, (raw.x_at(i) - x_rec).norm());
    worst_y = std::max(worst_y, (raw.y_at(i) - y_rec).norm());
  }
  CHECK(worst_x <= 1e-8 * scale);
  CHECK(worst_y <= 1e-8 * scale);
}

TEST_CASE("ensemble replicas are split streams, schedule independent") {
  const auto inst = model::random_instance(2, 2, 6, 3);
  engine::SimConfig cfg;
  cfg.alpha = 0.01;
  cfg.beta = 0.1;
  cfg.n_steps = 5000;
  cfg.seed = 41;
  cfg.initial = engine::InitialCondition::ball(1.0);

  const auto one = engine::simulate_ensemble(inst, cfg, 1, 1);
  engine::SimConfig solo = cfg;
  solo.seed = rng::split(cfg.seed, 0);
  const auto direct = engine::simulate(inst, solo);
  CHECK(one.replicas[0].x_data == direct.x_data);
  CHECK(one.replicas[0].xi == direct.xi);

  const auto serial = engine::simulate_ensemble(inst, cfg, 8, 1);
  const auto threaded = engine::simulate_ensemble(inst, cfg, 8, 4);
  for (int k = 0; k < 8; ++k) {
    CHECK(serial.replicas[k].x_data == threaded.replicas[k].x_data);
    CHECK(serial.replicas[k].y_data == threaded.replicas[k].y_data);
    CHECK(serial.replicas[k].xi == threaded.replicas[k].xi);
  }
}

TEST_CASE("coupled pairs share the chain path") {
  const auto inst = model::random_instance(2, 2, 8, 13);
  engine::SimConfig cfg;
  cfg.alpha = 0.01;
  cfg.beta = 0.1;
  cfg.n_steps = 4000;
  cfg.record_every = 1;
  cfg.seed = 55;
  cfg.initial = engine::InitialCondition::ball(1.0);

  const auto same = engine::simulate_coupled(inst, cfg, cfg.initial);
  CHECK(same.first.xi == same.second.xi);
  for (double d : same.delta_x) CHECK(d == 0.0);
  for (double d : same.delta_ybar) CHECK(d == 0.0);

  const auto pair =
      engine::simulate_coupled(inst, cfg, engine::InitialCondition::ball(0.3));
  CHECK(pair.first.xi == pair.second.xi);
  CHECK(pair.delta_x.front() > 0.0);

  // Log-linear decay of the coupled slow distance.
  std::vector<double> ts, ds;
  for (std::size_t i = 0; i < pair.first.t.size(); ++i) {
    if (pair.delta_x[i] > 0.0) {
      ts.push_back(static_cast<double>(pair.first.t[i]));
      ds.push_back(pair.delta_x[i]);
    }
  }
  const auto fit =
      stats::fit_scaling(ts, ds, {}, stats::ScalingModel::kExponential);
  CHECK(fit.slope < 0.0);
}

TEST_CASE("noiseless coupled distance follows the linear contraction") {
  const Eigen::MatrixXd i2 = Eigen::MatrixXd::Identity(2, 2);
  const auto inst = decoupled_identity();
  engine::SimConfig cfg;
  cfg.alpha = 0.05;
  cfg.beta = 0.1;
  cfg.n_steps = 200;
  cfg.record_every = 1;
  cfg.seed = 23;
  Eigen::VectorXd x0(2), y0(2);
  x0 << 1.0, 0.0;
  y0 << 0.0, 1.0;
  cfg.initial = engine::InitialCondition::fixed(x0, y0, 0);
  const auto pair = engine::simulate_coupled(
      inst, cfg,
      engine::InitialCondition::fixed(0.5 * x0, Eigen::VectorXd::Zero(2), 0));

  const Eigen::MatrixXd m = joint_step(inst, cfg.alpha, cfg.beta);
  Eigen::VectorXd dz(4);
  dz.head(2) = x0 - 0.5 * x0;
  dz.tail(2) = y0;
  for (std::size_t i = 0; i < pair.first.t.size(); ++i) {
    const long t = pair.first.t[i];
    Eigen::VectorXd cur = dz;
    for (long s = 0; s < t; ++s) cur = m * cur;
    CHECK(pair.delta_x[i] == doctest::Approx(cur.head(2).norm()).epsilon(1e-10));
  }
}

TEST_CASE("blow-ups truncate and flag the trajectory") {
  const auto inst = model::random_instance(2, 2, 6, 29);
  engine::SimConfig cfg;
  cfg.alpha = 40.0;
  cfg.beta = 80.0;
  cfg.n_steps = 100000;
  cfg.record_every = 1;
  cfg.seed = 7;
  cfg.initial = engine::InitialCondition::ball(1.0);
  const auto traj = engine::simulate(inst, cfg);
  CHECK(traj.diverged);
  CHECK(traj.divergence_step >= 0);
  CHECK(traj.t.back() <= cfg.n_steps);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    CHECK(std::isfinite(traj.x_at(i).lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("streaming tail averages equal the recorded-path averages") {
  const auto inst = model::random_instance(2, 2, 5, 37);
  engine::SimConfig cfg;
  cfg.alpha = 0.01;
  cfg.beta = 0.1;
  cfg.n_steps = 3000;
  cfg.record_every = 1;
  cfg.seed = 61;
  cfg.initial = engine::InitialCondition::ball(1.0);

  engine::TailSpec spec;
  spec.t0 = 500;
  spec.checkpoints = {1000, 2000, 3000};
  const auto tail = engine::simulate_tail(inst, cfg, spec);
  const auto traj = engine::simulate(inst, cfg);

  for (std::size_t c = 0; c < spec.checkpoints.size(); ++c) {
    const auto avg = stats::tail_average(traj, spec.t0, spec.checkpoints[c]);
    CHECK((tail.x_avg[c] - avg.x).norm() <= 1e-12 * (1.0 + avg.x.norm()));
    CHECK((tail.y_avg[c] - avg.y).norm() <= 1e-12 * (1.0 + avg.y.norm()));
  }
  CHECK((tail.x_final - traj.x_at(traj.size() - 1)).norm() == 0.0);
}

TEST_CASE("trajectory csv round trips at full precision") {
  const auto inst = model::random_instance(2, 2, 4, 43);
  engine::SimConfig cfg;
  cfg.alpha = 0.02;
  cfg.beta = 0.15;
  cfg.n_steps = 50;
  cfg.record_every = 1;
  cfg.seed = 71;
  cfg.initial = engine::InitialCondition::ball(1.0);
  const auto traj = engine::simulate(inst, cfg);

  const std::string path = "engine_traj_test.csv";
  engine::save_trajectory_csv(traj, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,xi,x_0,x_1,y_0,y_1");
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string field;
    std::getline(ls, field, ',');
    CHECK(std::stol(field) == traj.t[row]);
    std::getline(ls, field, ',');
    CHECK(std::stoi(field) == traj.xi[row]);
    for (int j = 0; j < 2; ++j) {
      std::getline(ls, field, ',');
      CHECK(std::stod(field) == traj.x_at(row)(j));
    }
    for (int j = 0; j < 2; ++j) {
      std::getline(ls, field, ',');
      CHECK(std::stod(field) == traj.y_at(row)(j));
    }
    ++row;
  }
  CHECK(row == traj.size());
  std::remove(path.c_str());
}
