// Command-line driver: instance generation and validation, the experiment
// runner, the moment oracle, and single-trajectory exports.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ttsa/csv.hpp"
#include "ttsa/engine.hpp"
#include "ttsa/errors.hpp"
#include "ttsa/experiments.hpp"
#include "ttsa/model.hpp"
#include "ttsa/moments.hpp"
#include "ttsa/version.hpp"

namespace {

using namespace ttsa;

int classify_exit(const std::exception& e) {
  if (dynamic_cast<const DivergenceError*>(&e) ||
      dynamic_cast<const ResolutionError*>(&e) ||
      dynamic_cast<const PairingError*>(&e)) {
    return 2;
  }
  return 1;
}

void print_constants(const model::ProblemInstance& inst) {
  const spectral::SpectralConstants& c = inst.constants();
  std::printf("d_x=%ld d_y=%ld states=%d\n", static_cast<long>(inst.d_x),
              static_cast<long>(inst.d_y), inst.n_states());
  std::printf("  mu_x    %-12.6g mu_y    %-12.6g\n", c.mu_x, c.mu_y);
  std::printf("  kappa_x %-12.6g kappa_y %-12.6g\n", c.kappa_x, c.kappa_y);
  std::printf("  J_max   %-12.6g\n", c.j_max);
  std::printf("  sigma_x %-12.6g sigma_y %-12.6g\n", inst.sigma_x,
              inst.sigma_y);
  std::printf("  rho     %-12.6g c_rho   %-12.6g\n", inst.markov.rho,
              inst.markov.c_rho);
}

int cmd_gen(int dx, int dy, int states, std::uint64_t seed,
            const model::InstanceParams& params, const std::string& out) {
  const model::ProblemInstance inst =
      model::random_instance(dx, dy, states, seed, params);
  model::save_instance(inst, out);
  std::printf("wrote %s\n", out.c_str());
  print_constants(inst);
  return 0;
}

int cmd_check(const std::string& path, bool has_steps, double alpha,
              double beta, double c1, double c2) {
  model::ProblemInstance inst;
  try {
    inst = model::load_instance(path);
  } catch (const StabilityError& e) {
    std::printf("assumption 1 (stability): FAIL  %s\n", e.what());
    return 1;
  } catch (const ErgodicityError& e) {
    std::printf("assumption 2 (ergodicity): FAIL  %s\n", e.what());
    return 1;
  }

  std::printf("assumption 1 (stability): PASS  margin(delta)=%.6g margin(J22)=%.6g\n",
              inst.derived.margin_delta, inst.derived.margin_j22);
  std::printf("assumption 2 (ergodicity): PASS  rho=%.6g c_rho=%.6g pi_min=%.6g\n",
              inst.markov.rho, inst.markov.c_rho, inst.markov.pi.minCoeff());

  // Noise centering holds by construction at ingest; report the residual.
  double centering = 0.0;
  auto mean_abs = [&](const auto& blocks) {
    auto acc = (inst.markov.pi(0) * blocks[0]).eval();
    for (int k = 1; k < inst.n_states(); ++k) {
      acc += inst.markov.pi(k) * blocks[k];
    }
    return acc.cwiseAbs().maxCoeff();
  };
  centering = std::max({mean_abs(inst.noise.w11), mean_abs(inst.noise.w12),
                        mean_abs(inst.noise.w21), mean_abs(inst.noise.w22),
                        mean_abs(inst.noise.u1), mean_abs(inst.noise.u2)});
  std::printf("assumption 3 (centered noise): PASS  max residual=%.3g\n",
              centering);

  if (has_steps) {
    const model::StepsizeReport r =
        model::validate_stepsizes(inst, alpha, beta, c1, c2);
    std::printf("stepsizes (alpha=%g beta=%g): %s  tau=%ld m1=%.6g m2=%.6g\n",
                r.alpha, r.beta, r.feasible ? "feasible" : "infeasible", r.tau,
                r.m1, r.m2);
  }
  return 0;
}

int cmd_run(const std::string& preset_name, const std::string& config_path,
            const std::string& instance_override, const std::string& out_dir,
            bool seed_given, std::uint64_t seed, int threads) {
  experiments::ExperimentConfig config;
  if (!preset_name.empty()) {
    config = experiments::preset(preset_name);
  } else if (!config_path.empty()) {
    config = experiments::load_config(config_path);
  } else {
    std::fprintf(stderr, "error: run needs --preset or --config\n");
    return 1;
  }
  if (!instance_override.empty()) config.instance_path = instance_override;
  if (seed_given) config.seed = seed;

  const experiments::RunOutcome outcome =
      experiments::run_experiment(config, out_dir, threads);
  for (const std::string& f : outcome.files) {
    std::printf("wrote %s/%s\n", out_dir.c_str(), f.c_str());
  }
  if (outcome.status != experiments::RunStatus::kOk) {
    std::fprintf(stderr, "error: %s\n", outcome.message.c_str());
  }
  return static_cast<int>(outcome.status);
}

int cmd_oracle(const std::string& path, double alpha, double beta,
               const std::string& out) {
  const model::ProblemInstance inst = model::load_instance(path);
  const moments::StationaryMoments m =
      moments::stationary_second_moments(inst, alpha, beta);
  const std::string text = moments::to_json(m);
  if (out.empty()) {
    std::printf("%s\n", text.c_str());
  } else {
    io::write_file(out, text + "\n");
    std::printf("wrote %s\n", out.c_str());
  }
  std::printf("bias_x norm     %.12g\n", m.first.bias_x.norm());
  std::printf("bias_ybar norm  %.12g\n", m.first.bias_ybar.norm());
  std::printf("var_x trace     %.12g\n", m.var_x_trace);
  std::printf("var_y trace     %.12g\n", m.var_y_trace);
  std::printf("radius first=%.6g second=%.6g\n", m.first.radius_first,
              m.radius_second);
  return 0;
}

int cmd_simulate(const std::string& path, double alpha, double beta,
                 long steps, long record_every, double radius,
                 std::uint64_t seed, const std::string& out) {
  const model::ProblemInstance inst = model::load_instance(path);
  engine::SimConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.n_steps = steps;
  cfg.record_every = record_every;
  cfg.seed = seed;
  cfg.initial = engine::InitialCondition::ball(radius);
  const engine::Trajectory traj = engine::simulate(inst, cfg);
  engine::save_trajectory_csv(traj, out);
  std::printf("wrote %s (%zu rows%s)\n", out.c_str(), traj.size(),
              traj.diverged ? ", diverged" : "");
  return traj.diverged ? 2 : 0;
}

int cmd_couple(const std::string& path, double alpha, double beta, long steps,
               long record_every, double radius, std::uint64_t seed,
               const std::string& out) {
  const model::ProblemInstance inst = model::load_instance(path);
  engine::SimConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.n_steps = steps;
  cfg.record_every = record_every;
  cfg.seed = seed;
  cfg.initial = engine::InitialCondition::ball(radius);
  const engine::CoupledPair pair = engine::simulate_coupled(
      inst, cfg, engine::InitialCondition::ball(radius));

  std::ostringstream os;
  os << "t,delta_x,delta_ybar\n";
  for (std::size_t i = 0; i < pair.first.t.size(); ++i) {
    os << pair.first.t[i] << ',' << io::format_double(pair.delta_x[i]) << ','
       << io::format_double(pair.delta_ybar[i]) << '\n';
  }
  io::write_file(out, os.str());
  std::printf("wrote %s (%zu rows%s)\n", out.c_str(), pair.first.t.size(),
              pair.first.diverged || pair.second.diverged ? ", diverged" : "");
  return pair.first.diverged || pair.second.diverged ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linear two-timescale stochastic approximation toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 1;
  int threads = 1;
  std::string out;
  app.add_option("--seed", seed, "global seed");
  app.add_option("--threads", threads, "worker threads for ensembles");
  app.add_option("--out", out, "output path (file or directory by command)");

  auto* gen = app.add_subcommand("gen", "generate a random instance");
  int dx = 2, dy = 2, states = 10;
  model::InstanceParams params;
  std::vector<double> eig_delta, eig_j22;
  gen->add_option("--dx", dx, "slow dimension");
  gen->add_option("--dy", dy, "fast dimension");
  gen->add_option("--states", states, "number of chain states");
  gen->add_option("--noise-scale", params.noise_scale, "noise block scale");
  gen->add_option("--coupling-scale", params.coupling_scale,
                  "off-diagonal drift scale");
  gen->add_option("--min-entry", params.min_entry, "kernel entry floor");
  gen->add_option("--eig-delta", eig_delta, "eigenvalue range of delta")
      ->expected(2);
  gen->add_option("--eig-j22", eig_j22, "eigenvalue range of J22")->expected(2);
  std::string gen_out = "instance.json";
  gen->add_option("-o,--output", gen_out, "instance file to write");

  auto* check = app.add_subcommand("check", "validate an instance file");
  std::string check_instance;
  double check_alpha = 0.0, check_beta = 0.0, c1 = 1.0, c2 = 1.0;
  check->add_option("-i,--instance", check_instance, "instance JSON")
      ->required();
  auto* copt_a = check->add_option("--alpha", check_alpha, "slow stepsize");
  auto* copt_b = check->add_option("--beta", check_beta, "fast stepsize");
  copt_a->needs(copt_b);
  copt_b->needs(copt_a);
  check->add_option("--c1", c1, "budget constant for beta*tau");
  check->add_option("--c2", c2, "budget constant for alpha/beta");

  auto* run = app.add_subcommand("run", "run an experiment config or preset");
  std::string preset_name, config_path, run_instance, run_out = "out";
  run->add_option("--preset", preset_name, "fig1, fig2, fig5, or fig6");
  run->add_option("--config", config_path, "experiment config JSON");
  run->add_option("-i,--instance", run_instance,
                  "instance JSON overriding the config's source");
  run->add_option("-o,--output", run_out, "output directory");

  auto* oracle = app.add_subcommand("oracle", "exact stationary moments");
  std::string oracle_instance, oracle_out;
  double oracle_alpha = 3e-4, oracle_beta = 0.02;
  oracle->add_option("-i,--instance", oracle_instance, "instance JSON")
      ->required();
  oracle->add_option("--alpha", oracle_alpha, "slow stepsize")->required();
  oracle->add_option("--beta", oracle_beta, "fast stepsize")->required();
  oracle->add_option("-o,--output", oracle_out,
                     "moments JSON file (stdout when omitted)");

  auto* sim = app.add_subcommand("simulate", "write one trajectory as CSV");
  std::string sim_instance, sim_out = "trajectory.csv";
  double sim_alpha = 3e-4, sim_beta = 0.02, sim_radius = 1.0;
  long sim_steps = 100000, sim_record = 0;
  sim->add_option("-i,--instance", sim_instance, "instance JSON")->required();
  sim->add_option("--alpha", sim_alpha, "slow stepsize")->required();
  sim->add_option("--beta", sim_beta, "fast stepsize")->required();
  sim->add_option("--steps", sim_steps, "number of steps");
  sim->add_option("--record-every", sim_record,
                  "stride between recorded rows (0 = auto)");
  sim->add_option("--radius", sim_radius, "initial-condition ball radius");
  sim->add_option("-o,--output", sim_out, "CSV file to write");

  auto* couple = app.add_subcommand("couple", "coupled pair distances as CSV");
  std::string couple_instance, couple_out = "coupled.csv";
  double couple_alpha = 3e-4, couple_beta = 0.02, couple_radius = 1.0;
  long couple_steps = 100000, couple_record = 0;
  couple->add_option("-i,--instance", couple_instance, "instance JSON")
      ->required();
  couple->add_option("--alpha", couple_alpha, "slow stepsize")->required();
  couple->add_option("--beta", couple_beta, "fast stepsize")->required();
  couple->add_option("--steps", couple_steps, "number of steps");
  couple->add_option("--record-every", couple_record,
                     "stride between recorded rows (0 = auto)");
  couple->add_option("--radius", couple_radius,
                     "initial-condition ball radius");
  couple->add_option("-o,--output", couple_out, "CSV file to write");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      if (eig_delta.size() == 2) {
        params.eig_delta_lo = eig_delta[0];
        params.eig_delta_hi = eig_delta[1];
      }
      if (eig_j22.size() == 2) {
        params.eig_j22_lo = eig_j22[0];
        params.eig_j22_hi = eig_j22[1];
      }
      return cmd_gen(dx, dy, states, seed, params,
                     out.empty() ? gen_out : out);
    }
    if (check->parsed()) {
      return cmd_check(check_instance, copt_a->count() > 0, check_alpha,
                       check_beta, c1, c2);
    }
    if (run->parsed()) {
      return cmd_run(preset_name, config_path, run_instance,
                     out.empty() ? run_out : out,
                     app.count("--seed") > 0, seed, threads);
    }
    if (oracle->parsed()) {
      return cmd_oracle(oracle_instance, oracle_alpha, oracle_beta,
                        out.empty() ? oracle_out : out);
    }
    if (sim->parsed()) {
      return cmd_simulate(sim_instance, sim_alpha, sim_beta, sim_steps,
                          sim_record, sim_radius, seed,
                          out.empty() ? sim_out : out);
    }
    if (couple->parsed()) {
      return cmd_couple(couple_instance, couple_alpha, couple_beta,
                        couple_steps, couple_record, couple_radius, seed,
                        out.empty() ? couple_out : out);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return classify_exit(e);
  }
  return 0;
}
