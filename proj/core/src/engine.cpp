#include "ttsa/engine.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "ttsa/csv.hpp"
#include "ttsa/errors.hpp"

namespace ttsa::engine {

namespace {

// Sub-stream purposes of one run's seed.
constexpr std::uint64_t kStreamChainPath = 0;
constexpr std::uint64_t kStreamInitial = 1;
constexpr std::uint64_t kStreamSecondInitial = 2;

// Per-state affine step z' = A z + c, stored as d rows of (d+1) doubles with
// the offset in the last column.  Stepsizes are folded in at build time.
struct StepTable {
  int d = 0;
  int n = 0;
  std::vector<double> rows;

  const double* at(int xi) const {
    return rows.data() +
           static_cast<std::size_t>(xi) * static_cast<std::size_t>(d) *
               static_cast<std::size_t>(d + 1);
  }
  double* at(int xi) {
    return rows.data() +
           static_cast<std::size_t>(xi) * static_cast<std::size_t>(d) *
               static_cast<std::size_t>(d + 1);
  }
};

StepTable alloc_table(int d, int n) {
  StepTable tab;
  tab.d = d;
  tab.n = n;
  tab.rows.assign(static_cast<std::size_t>(n) * static_cast<std::size_t>(d) *
                      static_cast<std::size_t>(d + 1),
                  0.0);
  return tab;
}

void write_block(StepTable& tab, int xi, int row0, int col0,
                 const Eigen::MatrixXd& m) {
  double* base = tab.at(xi);
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      base[(row0 + i) * (tab.d + 1) + (col0 + j)] += m(i, j);
}

void write_offset(StepTable& tab, int xi, int row0, const Eigen::VectorXd& v) {
  double* base = tab.at(xi);
  for (Eigen::Index i = 0; i < v.size(); ++i)
    base[(row0 + i) * (tab.d + 1) + tab.d] += v(i);
}

// Raw recursion:
//   x' = x - alpha ((J11 + W11) x + (J12 + W12) y + b1 + u1)
//   y' = y - beta  ((J21 + W21) x + (J22 + W22) y + b2 + u2)
StepTable build_raw_table(const model::ProblemInstance& inst, double alpha,
                          double beta) {
  const int dx = static_cast<int>(inst.d_x);
  const int dy = static_cast<int>(inst.d_y);
  StepTable tab = alloc_table(dx + dy, inst.n_states());
  const Eigen::MatrixXd ix = Eigen::MatrixXd::Identity(dx, dx);
  const Eigen::MatrixXd iy = Eigen::MatrixXd::Identity(dy, dy);
  for (int s = 0; s < inst.n_states(); ++s) {
    const std::size_t k = static_cast<std::size_t>(s);
    write_block(tab, s, 0, 0, ix - alpha * (inst.j11 + inst.noise.w11[k]));
    write_block(tab, s, 0, dx, -alpha * (inst.j12 + inst.noise.w12[k]));
    write_offset(tab, s, 0, -alpha * (inst.b1 + inst.noise.u1[k]));
    write_block(tab, s, dx, 0, -beta * (inst.j21 + inst.noise.w21[k]));
    write_block(tab, s, dx, dx, iy - beta * (inst.j22 + inst.noise.w22[k]));
    write_offset(tab, s, dx, -beta * (inst.b2 + inst.noise.u2[k]));
  }
  return tab;
}

// Centered recursion on (xb, yb) = (x - x*, y - y*(x)).  Substituting the
// affine change of variables into the raw recursion gives
//   xb' = (I - alpha Dl) xb - alpha J12 yb - alpha wx
//   yb' = (I - beta J22) yb - beta wy - alpha K (J12 yb + Dl xb + wx)
// with Dl the Schur complement, K = J22^{-1} J21, and the noise re-expressed
// against centered coordinates:
//   wx = (W11 - W12 K) xb + W12 yb + k1,  k1 = W11 x* + W12 y* + u1
//   wy = (W21 - W22 K) xb + W22 yb + k2,  k2 = W21 x* + W22 y* + u2.
StepTable build_centered_table(const model::ProblemInstance& inst, double alpha,
                               double beta) {
  const int dx = static_cast<int>(inst.d_x);
  const int dy = static_cast<int>(inst.d_y);
  StepTable tab = alloc_table(dx + dy, inst.n_states());
  const Eigen::MatrixXd ix = Eigen::MatrixXd::Identity(dx, dx);
  const Eigen::MatrixXd iy = Eigen::MatrixXd::Identity(dy, dy);
  const Eigen::MatrixXd kmat = inst.j22.partialPivLu().solve(inst.j21);
  const Eigen::MatrixXd& dl = inst.derived.delta;
  for (int s = 0; s < inst.n_states(); ++s) {
    const std::size_t k = static_cast<std::size_t>(s);
    const Eigen::MatrixXd wdx = inst.noise.w11[k] - inst.noise.w12[k] * kmat;
    const Eigen::MatrixXd wdy = inst.noise.w21[k] - inst.noise.w22[k] * kmat;
    const Eigen::VectorXd k1 = inst.noise.w11[k] * inst.x_star +
                               inst.noise.w12[k] * inst.y_star +
                               inst.noise.u1[k];
    const Eigen::VectorXd k2 = inst.noise.w21[k] * inst.x_star +
                               inst.noise.w22[k] * inst.y_star +
                               inst.noise.u2[k];
    write_block(tab, s, 0, 0, ix - alpha * (dl + wdx));
    write_block(tab, s, 0, dx, -alpha * (inst.j12 + inst.noise.w12[k]));
    write_offset(tab, s, 0, -alpha * k1);
    write_block(tab, s, dx, 0, -beta * wdy - alpha * kmat * (dl + wdx));
    write_block(tab, s, dx, dx,
                iy - beta * (inst.j22 + inst.noise.w22[k]) -
                    alpha * kmat * (inst.j12 + inst.noise.w12[k]));
    write_offset(tab, s, dx, -beta * k2 - alpha * kmat * k1);
  }
  return tab;
}

inline void step_once(const StepTable& tab, int xi, const double* z,
                      double* znew) {
  const double* p = tab.at(xi);
  const int d = tab.d;
  for (int i = 0; i < d; ++i) {
    const double* row = p + i * (d + 1);
    double acc = row[d];
    for (int j = 0; j < d; ++j) acc += row[j] * z[j];
    znew[i] = acc;
  }
}

inline bool in_range(const double* z, int d) {
  for (int i = 0; i < d; ++i) {
    if (!(std::fabs(z[i]) <= kBlowupLimit)) return false;
  }
  return true;
}

long stride_at(long t, long record_every) {
  if (record_every > 0) return record_every;
  return t <= 10000 ? 1 : 10;
}

bool scheduled(long t, long record_every) {
  return t == 0 || t % stride_at(t, record_every) == 0;
}

void check_config(const model::ProblemInstance& inst, const SimConfig& cfg) {
  if (!(cfg.alpha > 0.0) || !(cfg.beta > 0.0)) {
    throw ValidationError("stepsizes must be positive");
  }
  if (cfg.n_steps < 0) throw ValidationError("n_steps must be nonnegative");
  if (cfg.record_every < 0) {
    throw ValidationError("record_every must be nonnegative");
  }
  if (cfg.initial.kind == InitialCondition::Kind::kFixed) {
    if (cfg.initial.x0.size() != inst.d_x || cfg.initial.y0.size() != inst.d_y) {
      throw DimensionError("fixed initial condition has wrong dimensions");
    }
    if (cfg.initial.xi0 >= inst.n_states()) {
      throw ValidationError("initial chain state out of range");
    }
  } else if (!(cfg.initial.radius >= 0.0)) {
    throw ValidationError("initial ball radius must be nonnegative");
  }
}

chain::ChainSampler make_sampler(const model::ProblemInstance& inst,
                                 std::uint64_t seed,
                                 const InitialCondition& init) {
  rng::Stream stream(rng::split(seed, kStreamChainPath));
  if (init.kind == InitialCondition::Kind::kFixed && init.xi0 >= 0) {
    return chain::ChainSampler(inst.markov, stream, init.xi0);
  }
  return chain::ChainSampler::from_stationary(inst.markov, stream);
}

Eigen::VectorXd draw_initial(const model::ProblemInstance& inst,
                             std::uint64_t seed, const InitialCondition& init,
                             std::uint64_t stream_id) {
  const Eigen::Index d = inst.d_x + inst.d_y;
  Eigen::VectorXd z(d);
  if (init.kind == InitialCondition::Kind::kFixed) {
    z.head(inst.d_x) = init.x0;
    z.tail(inst.d_y) = init.y0;
    return z;
  }
  rng::Stream stream(rng::split(seed, stream_id));
  z = stream.uniform_in_ball(d, init.radius);
  z.head(inst.d_x) += inst.x_star;
  z.tail(inst.d_y) += inst.y_star;
  return z;
}

// Runs the recursion, invoking observe(t, xi, z) at every index from 0 to
// n_steps (or the last in-range index on divergence).  Returns the first
// out-of-range index, or -1 if the run completed.
template <typename Observer>
long run_loop(const StepTable& tab, chain::ChainSampler& sampler,
              Eigen::VectorXd& z, long n_steps, Observer&& observe) {
  const int d = tab.d;
  Eigen::VectorXd znew(d);
  long t = 0;
  int xi = sampler.state();
  for (;;) {
    observe(t, xi, z.data());
    if (t == n_steps) return -1;
    step_once(tab, xi, z.data(), znew.data());
    if (!in_range(znew.data(), d)) return t + 1;
    z.swap(znew);
    ++t;
    xi = sampler.step();
  }
}

// Trajectory recorder shared by the raw and centered runners.
struct Recorder {
  Trajectory traj;
  long record_every;
  long last_t = -1;
  int last_xi = 0;
  std::vector<double> last_z;

  Recorder(const model::ProblemInstance& inst, const SimConfig& cfg) {
    traj.d_x = inst.d_x;
    traj.d_y = inst.d_y;
    traj.alpha = cfg.alpha;
    traj.beta = cfg.beta;
    record_every = cfg.record_every;
    last_z.resize(static_cast<std::size_t>(inst.d_x + inst.d_y));
  }

  void operator()(long t, int xi, const double* z) {
    last_t = t;
    last_xi = xi;
    std::memcpy(last_z.data(), z, last_z.size() * sizeof(double));
    if (scheduled(t, record_every)) push(t, xi, z);
  }

  void push(long t, int xi, const double* z) {
    traj.t.push_back(t);
    traj.xi.push_back(xi);
    const std::size_t dx = static_cast<std::size_t>(traj.d_x);
    const std::size_t dy = static_cast<std::size_t>(traj.d_y);
    traj.x_data.insert(traj.x_data.end(), z, z + dx);
    traj.y_data.insert(traj.y_data.end(), z + dx, z + dx + dy);
  }

  // The final observed index is always part of the record.
  void finish(long first_bad) {
    if (last_t >= 0 && (traj.t.empty() || traj.t.back() != last_t)) {
      push(last_t, last_xi, last_z.data());
    }
    if (first_bad >= 0) {
      traj.diverged = true;
      traj.divergence_step = first_bad;
    }
  }
};

Trajectory run_with_table(const model::ProblemInstance& inst,
                          const SimConfig& cfg, const StepTable& tab,
                          Eigen::VectorXd z0) {
  chain::ChainSampler sampler = make_sampler(inst, cfg.seed, cfg.initial);
  Recorder rec(inst, cfg);
  const long first_bad = run_loop(tab, sampler, z0, cfg.n_steps, rec);
  rec.finish(first_bad);
  return std::move(rec.traj);
}

void parallel_for(int n_items, int n_threads,
                  const std::function<void(int)>& fn) {
  const int nt = std::max(1, std::min(n_threads, n_items));
  if (nt <= 1) {
    for (int i = 0; i < n_items; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(nt));
  for (int w = 0; w < nt; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n_items) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

InitialCondition InitialCondition::fixed(Eigen::VectorXd x, Eigen::VectorXd y,
                                         int xi) {
  InitialCondition init;
  init.kind = Kind::kFixed;
  init.x0 = std::move(x);
  init.y0 = std::move(y);
  init.xi0 = xi;
  return init;
}

InitialCondition InitialCondition::ball(double radius) {
  InitialCondition init;
  init.kind = Kind::kRandomBall;
  init.radius = radius;
  return init;
}

Trajectory simulate(const model::ProblemInstance& instance,
                    const SimConfig& config) {
  check_config(instance, config);
  const StepTable tab = build_raw_table(instance, config.alpha, config.beta);
  Eigen::VectorXd z0 =
      draw_initial(instance, config.seed, config.initial, kStreamInitial);
  return run_with_table(instance, config, tab, std::move(z0));
}

Trajectory simulate_centered(const model::ProblemInstance& instance,
                             const SimConfig& config) {
  check_config(instance, config);
  const StepTable tab =
      build_centered_table(instance, config.alpha, config.beta);
  Eigen::VectorXd z0 =
      draw_initial(instance, config.seed, config.initial, kStreamInitial);
  // Same raw draw as simulate(), then shifted into centered coordinates.
  const Eigen::VectorXd x0 = z0.head(instance.d_x);
  const Eigen::VectorXd y0 = z0.tail(instance.d_y);
  z0.head(instance.d_x) = x0 - instance.x_star;
  z0.tail(instance.d_y) = y0 - instance.y_star_of(x0);
  return run_with_table(instance, config, tab, std::move(z0));
}

CoupledPair simulate_coupled(const model::ProblemInstance& instance,
                             const SimConfig& config,
                             const InitialCondition& second_initial) {
  check_config(instance, config);
  SimConfig second_cfg = config;
  second_cfg.initial = second_initial;
  check_config(instance, second_cfg);

  const StepTable tab = build_raw_table(instance, config.alpha, config.beta);
  chain::ChainSampler sampler = make_sampler(instance, config.seed, config.initial);
  Eigen::VectorXd z1 =
      draw_initial(instance, config.seed, config.initial, kStreamInitial);
  Eigen::VectorXd z2 = draw_initial(instance, config.seed, second_initial,
                                    kStreamSecondInitial);

  const int d = tab.d;
  const Eigen::Index dx = instance.d_x;
  const Eigen::Index dy = instance.d_y;
  const Eigen::MatrixXd kmat = instance.j22.partialPivLu().solve(instance.j21);

  CoupledPair pair;
  Recorder rec1(instance, config);
  Recorder rec2(instance, config);
  Eigen::VectorXd znew1(d), znew2(d);
  long t = 0;
  int xi = sampler.state();
  long first_bad = -1;
  const auto record_delta = [&] {
    const Eigen::VectorXd dxv = z1.head(dx) - z2.head(dx);
    const Eigen::VectorXd dyv = (z1.tail(dy) - z2.tail(dy)) + kmat * dxv;
    pair.delta_x.push_back(dxv.norm());
    pair.delta_ybar.push_back(dyv.norm());
  };
  for (;;) {
    rec1(t, xi, z1.data());
    rec2(t, xi, z2.data());
    if (scheduled(t, config.record_every)) record_delta();
    if (t == config.n_steps) break;
    step_once(tab, xi, z1.data(), znew1.data());
    step_once(tab, xi, z2.data(), znew2.data());
    if (!in_range(znew1.data(), d) || !in_range(znew2.data(), d)) {
      first_bad = t + 1;
      break;
    }
    z1.swap(znew1);
    z2.swap(znew2);
    ++t;
    xi = sampler.step();
  }
  rec1.finish(first_bad);
  rec2.finish(first_bad);
  // Keep the delta curves aligned with the recorded indices.
  if (pair.delta_x.size() < rec1.traj.t.size()) record_delta();
  pair.first = std::move(rec1.traj);
  pair.second = std::move(rec2.traj);
  return pair;
}

Ensemble simulate_ensemble(const model::ProblemInstance& instance,
                           const SimConfig& config, int n_replicas,
                           int n_threads) {
  if (n_replicas <= 0) throw ValidationError("need at least one replica");
  check_config(instance, config);
  Ensemble ens;
  ens.replicas.resize(static_cast<std::size_t>(n_replicas));
  parallel_for(n_replicas, n_threads, [&](int k) {
    SimConfig cfg = config;
    cfg.seed = rng::split(config.seed, static_cast<std::uint64_t>(k));
    ens.replicas[static_cast<std::size_t>(k)] = simulate(instance, cfg);
  });
  return ens;
}

TailResult simulate_tail(const model::ProblemInstance& instance,
                         const SimConfig& config, const TailSpec& spec) {
  check_config(instance, config);
  if (spec.t0 < 0 || spec.t0 > config.n_steps) {
    throw ValidationError("tail start must lie within the run");
  }
  for (std::size_t i = 0; i < spec.checkpoints.size(); ++i) {
    const long c = spec.checkpoints[i];
    if (c < spec.t0 || c > config.n_steps ||
        (i > 0 && c <= spec.checkpoints[i - 1])) {
      throw ValidationError("checkpoints must be ascending within [t0, n_steps]");
    }
  }

  const StepTable tab = build_raw_table(instance, config.alpha, config.beta);
  chain::ChainSampler sampler = make_sampler(instance, config.seed, config.initial);
  Eigen::VectorXd z =
      draw_initial(instance, config.seed, config.initial, kStreamInitial);

  const Eigen::Index dx = instance.d_x;
  const Eigen::Index dy = instance.d_y;
  const int d = tab.d;

  TailResult out;
  out.alpha = config.alpha;
  out.beta = config.beta;
  out.t0 = spec.t0;

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  std::size_t next_cp = 0;
  Eigen::VectorXd last(d);
  const long first_bad =
      run_loop(tab, sampler, z, config.n_steps, [&](long t, int, const double* zp) {
        if (t >= spec.t0) {
          for (int i = 0; i < d; ++i) sum(i) += zp[i];
        }
        while (next_cp < spec.checkpoints.size() &&
               spec.checkpoints[next_cp] == t) {
          const double inv = 1.0 / static_cast<double>(t - spec.t0 + 1);
          out.checkpoints.push_back(t);
          out.x_avg.push_back(inv * sum.head(dx));
          out.y_avg.push_back(inv * sum.tail(dy));
          ++next_cp;
        }
        last = Eigen::Map<const Eigen::VectorXd>(zp, d);
      });

  out.x_final = last.head(dx);
  out.y_final = last.tail(dy);
  if (first_bad >= 0) {
    out.diverged = true;
    out.divergence_step = first_bad;
  }
  return out;
}

std::vector<TailResult> simulate_tail_ensemble(
    const model::ProblemInstance& instance, const SimConfig& config,
    const TailSpec& spec, int n_replicas, int n_threads) {
  if (n_replicas <= 0) throw ValidationError("need at least one replica");
  std::vector<TailResult> out(static_cast<std::size_t>(n_replicas));
  parallel_for(n_replicas, n_threads, [&](int k) {
    SimConfig cfg = config;
    cfg.seed = rng::split(config.seed, static_cast<std::uint64_t>(k));
    out[static_cast<std::size_t>(k)] = simulate_tail(instance, cfg, spec);
  });
  return out;
}

CouplingCurve coupled_ensemble_curve(const model::ProblemInstance& instance,
                                     const SimConfig& config,
                                     const InitialCondition& second_initial,
                                     int n_pairs, int n_threads) {
  if (n_pairs <= 0) throw ValidationError("need at least one pair");
  std::vector<CoupledPair> pairs(static_cast<std::size_t>(n_pairs));
  parallel_for(n_pairs, n_threads, [&](int k) {
    SimConfig cfg = config;
    cfg.seed = rng::split(config.seed, static_cast<std::uint64_t>(k));
    pairs[static_cast<std::size_t>(k)] =
        simulate_coupled(instance, cfg, second_initial);
  });

  CouplingCurve curve;
  std::size_t n_indices = std::numeric_limits<std::size_t>::max();
  for (const auto& p : pairs) {
    if (p.first.diverged) continue;
    n_indices = std::min(n_indices, p.delta_x.size());
  }
  if (n_indices == std::numeric_limits<std::size_t>::max()) n_indices = 0;
  std::vector<double> sx(n_indices, 0.0), sy(n_indices, 0.0);
  for (const auto& p : pairs) {
    if (p.first.diverged) continue;
    ++curve.n_pairs;
    for (std::size_t i = 0; i < n_indices; ++i) {
      sx[i] += p.delta_x[i] * p.delta_x[i];
      sy[i] += p.delta_ybar[i] * p.delta_ybar[i];
    }
  }
  if (curve.n_pairs == 0) {
    throw Error("every coupled pair diverged");
  }
  curve.t.assign(pairs[0].first.t.begin(),
                 pairs[0].first.t.begin() + static_cast<long>(n_indices));
  curve.mean_sq_delta_x.resize(n_indices);
  curve.mean_sq_delta_ybar.resize(n_indices);
  for (std::size_t i = 0; i < n_indices; ++i) {
    curve.mean_sq_delta_x[i] = sx[i] / curve.n_pairs;
    curve.mean_sq_delta_ybar[i] = sy[i] / curve.n_pairs;
  }
  return curve;
}

void save_trajectory_csv(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << "t,xi";
  for (Eigen::Index i = 0; i < traj.d_x; ++i) out << ",x_" << i;
  for (Eigen::Index i = 0; i < traj.d_y; ++i) out << ",y_" << i;
  out << '\n';
  for (std::size_t r = 0; r < traj.size(); ++r) {
    out << traj.t[r] << ',' << traj.xi[r];
    const auto x = traj.x_at(r);
    const auto y = traj.y_at(r);
    for (Eigen::Index i = 0; i < traj.d_x; ++i)
      out << ',' << io::format_double(x(i));
    for (Eigen::Index i = 0; i < traj.d_y; ++i)
      out << ',' << io::format_double(y(i));
    out << '\n';
  }
}

}  // namespace ttsa::engine
