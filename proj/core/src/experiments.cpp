#include "ttsa/experiments.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>
#include <utility>

#include <json.hpp>

#include "ttsa/csv.hpp"
#include "ttsa/engine.hpp"
#include "ttsa/errors.hpp"
#include "ttsa/moments.hpp"
#include "ttsa/rng.hpp"
#include "ttsa/svg_plot.hpp"
#include "ttsa/version.hpp"

namespace ttsa::experiments {

using nlohmann::json;

namespace {

// Sub-seed tags carving independent randomness out of the run seed.
constexpr std::uint64_t kTagSweep = 1;
constexpr std::uint64_t kTagTailCurves = 2;
constexpr std::uint64_t kTagCoupling = 3;
constexpr std::uint64_t kTagBootstrap = 0x626f6f74;

const std::vector<std::string>& known_analyses() {
  static const std::vector<std::string> names = {
      "bias-vs-beta",      "bias-vs-alpha",  "variance-vs-beta",
      "variance-vs-alpha", "ta-vs-rr",       "coupling-decay",
      "oracle-comparison"};
  return names;
}

std::string target_name(Target t) {
  return t == Target::kSlow ? "slow" : "fast";
}

Target target_from(const std::string& s) {
  if (s == "slow") return Target::kSlow;
  if (s == "fast") return Target::kFast;
  throw ValidationError("unknown target '" + s + "' (expected slow or fast)");
}

std::string pairing_name(Pairing p) {
  switch (p) {
    case Pairing::kBetaOnly: return "beta-only";
    case Pairing::kAlphaBeta: return "alpha-beta";
    case Pairing::kBoth: return "both";
  }
  return "beta-only";
}

Pairing pairing_from(const std::string& s) {
  if (s == "beta-only") return Pairing::kBetaOnly;
  if (s == "alpha-beta") return Pairing::kAlphaBeta;
  if (s == "both") return Pairing::kBoth;
  throw ValidationError("unknown pairing '" + s +
                        "' (expected beta-only, alpha-beta, or both)");
}

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

void validate_config(const ExperimentConfig& c) {
  if (c.schema != 1) {
    throw ValidationError("unsupported config schema " + std::to_string(c.schema));
  }
  if (c.analyses.empty()) throw ValidationError("no analyses requested");
  for (std::size_t i = 0; i < c.analyses.size(); ++i) {
    const std::string& a = c.analyses[i];
    const auto& known = known_analyses();
    if (std::find(known.begin(), known.end(), a) == known.end()) {
      std::string msg = "unknown analysis '" + a + "'; valid:";
      for (const auto& k : known) msg += " " + k;
      throw ValidationError(msg);
    }
    if (std::find(c.analyses.begin(), c.analyses.begin() + i, a) !=
        c.analyses.begin() + i) {
      throw ValidationError("analysis '" + a + "' listed twice");
    }
  }
  auto wants = [&](const std::string& a) {
    return std::find(c.analyses.begin(), c.analyses.end(), a) !=
           c.analyses.end();
  };
  if ((wants("bias-vs-beta") || wants("variance-vs-beta") ||
       wants("ta-vs-rr")) &&
      c.betas.empty()) {
    throw ValidationError("a beta grid is required by the requested analyses");
  }
  if ((wants("bias-vs-alpha") || wants("variance-vs-alpha")) &&
      c.alphas.empty()) {
    throw ValidationError("an alpha grid is required by the requested analyses");
  }
  for (double a : c.alphas) {
    if (!(a > 0.0)) throw ValidationError("alpha grid values must be positive");
  }
  for (double b : c.betas) {
    if (!(b > 0.0)) throw ValidationError("beta grid values must be positive");
  }
  if (!(c.alpha_fixed > 0.0) || !(c.beta_fixed > 0.0)) {
    throw ValidationError("fixed stepsizes must be positive");
  }
  if (c.n_steps < 2) throw ValidationError("n_steps must be at least 2");
  if (c.n_replicas < 2) throw ValidationError("n_replicas must be at least 2");
  if (!(c.warmup_factor > 0.0)) {
    throw ValidationError("warmup_factor must be positive");
  }
  if (c.n_checkpoints < 1) throw ValidationError("n_checkpoints must be positive");
  if (c.n_pairs < 2) throw ValidationError("n_pairs must be at least 2");
  if (!(c.coupling_radius > 0.0)) {
    throw ValidationError("coupling_radius must be positive");
  }
  if (!(c.c1 > 0.0) || !(c.c2 > 0.0)) {
    throw ValidationError("feasibility constants must be positive");
  }
  if (c.instance_path.empty()) {
    const GenerateSpec& g = c.generate;
    if (g.d_x < 1 || g.d_y < 1 || g.n_states < 1) {
      throw ValidationError("generate spec needs positive dimensions");
    }
  }
}

long warmup_steps(double factor, double alpha, double mu_x, long n_steps) {
  const long t0 = static_cast<long>(std::ceil(factor / (alpha * mu_x)));
  if (t0 >= n_steps) {
    std::ostringstream os;
    os << "horizon too short for the warm-up window: t0=" << t0
       << " with n_steps=" << n_steps;
    throw ValidationError(os.str());
  }
  return std::max<long>(t0, 0);
}

std::vector<long> checkpoint_grid(long t0, long n_steps, int k) {
  std::vector<long> cps;
  cps.reserve(static_cast<std::size_t>(k));
  for (int i = 1; i <= k; ++i) {
    long t = t0 + static_cast<long>(std::llround(
                      static_cast<double>(n_steps - t0) * i / k));
    t = std::clamp(t, t0, n_steps);
    if (cps.empty() || t > cps.back()) cps.push_back(t);
  }
  if (cps.empty() || cps.back() != n_steps) cps.push_back(n_steps);
  return cps;
}

std::uint64_t pair_seed(std::uint64_t base, double alpha, double beta) {
  return rng::split(rng::split(base, std::bit_cast<std::uint64_t>(alpha)),
                    std::bit_cast<std::uint64_t>(beta));
}

// Delta-method standard error of ||v|| given per-coordinate errors.
double norm_se(const Eigen::VectorXd& v, const Eigen::VectorXd& se) {
  const double n = v.norm();
  if (!(n > 0.0)) return se.norm();
  double s = 0.0;
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    const double c = v(j) * se(j);
    s += c * c;
  }
  return std::sqrt(s) / n;
}

struct RunContext {
  const ExperimentConfig& config;
  const model::ProblemInstance& instance;
  std::string out_dir;
  int threads = 1;
  std::uint64_t sweep_base = 0;
  std::uint64_t curves_base = 0;
  std::map<std::pair<double, double>, SweepPoint> sweep_cache;
  std::map<std::tuple<double, double, long>, std::vector<engine::TailResult>>
      tail_cache;
  std::vector<std::string>* files = nullptr;
};

std::string out_path(const RunContext& ctx, const std::string& name) {
  return (std::filesystem::path(ctx.out_dir) / name).string();
}

void record_file(RunContext& ctx, const std::string& name) {
  ctx.files->push_back(name);
}

void enforce_divergence_policy(int n_diverged, int n_replicas) {
  if (2 * n_diverged > n_replicas) {
    std::ostringstream os;
    os << n_diverged << " of " << n_replicas
       << " replicas diverged (more than half)";
    throw DivergenceError(os.str());
  }
}

const SweepPoint& cached_point(RunContext& ctx, double alpha, double beta) {
  const auto key = std::make_pair(alpha, beta);
  auto it = ctx.sweep_cache.find(key);
  if (it != ctx.sweep_cache.end()) return it->second;
  SweepPoint p = measure_point(ctx.instance, alpha, beta, ctx.config.n_steps,
                               ctx.config.n_replicas, ctx.config.warmup_factor,
                               pair_seed(ctx.sweep_base, alpha, beta),
                               ctx.threads);
  enforce_divergence_policy(p.n_diverged, p.n_replicas);
  return ctx.sweep_cache.emplace(key, std::move(p)).first->second;
}

const std::vector<engine::TailResult>& cached_tail_ensemble(RunContext& ctx,
                                                            double alpha,
                                                            double beta,
                                                            long t0) {
  const auto key = std::make_tuple(alpha, beta, t0);
  auto it = ctx.tail_cache.find(key);
  if (it != ctx.tail_cache.end()) return it->second;
  engine::SimConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.n_steps = ctx.config.n_steps;
  cfg.seed = pair_seed(ctx.curves_base, alpha, beta);
  cfg.initial = engine::InitialCondition::ball(1.0);
  engine::TailSpec spec;
  spec.t0 = t0;
  spec.checkpoints =
      checkpoint_grid(t0, ctx.config.n_steps, ctx.config.n_checkpoints);
  auto results = engine::simulate_tail_ensemble(ctx.instance, cfg, spec,
                                                ctx.config.n_replicas,
                                                ctx.threads);
  return ctx.tail_cache.emplace(key, std::move(results)).first->second;
}

json point_to_json(const SweepPoint& p) {
  const stats::BiasVarianceEstimate& e = p.estimate;
  json j;
  j["alpha"] = p.alpha;
  j["beta"] = p.beta;
  j["t0"] = p.t0;
  j["n_replicas"] = p.n_replicas;
  j["n_diverged"] = p.n_diverged;
  j["bias_x"] = vec_to_json(e.bias_x);
  j["bias_x_se"] = vec_to_json(e.bias_x_se);
  j["bias_x_norm"] = e.bias_x.norm();
  j["bias_ybar"] = vec_to_json(e.bias_ybar);
  j["bias_ybar_se"] = vec_to_json(e.bias_ybar_se);
  j["bias_ybar_norm"] = e.bias_ybar.norm();
  j["var_x"] = e.var_x;
  j["var_x_se"] = e.var_x_se;
  j["var_x_ci"] = {e.var_x_ci_lo, e.var_x_ci_hi};
  j["var_y"] = e.var_y;
  j["var_y_se"] = e.var_y_se;
  j["var_y_ci"] = {e.var_y_ci_lo, e.var_y_ci_hi};
  j["mse_x"] = e.mse_x;
  j["mse_y"] = e.mse_y;
  j["few_replicas"] = e.few_replicas;
  return j;
}

void headline_value(const SweepPoint& p, bool bias, Target target,
                    double* value, double* se) {
  const stats::BiasVarianceEstimate& e = p.estimate;
  if (bias) {
    const Eigen::VectorXd& b = target == Target::kSlow ? e.bias_x : e.bias_ybar;
    const Eigen::VectorXd& s =
        target == Target::kSlow ? e.bias_x_se : e.bias_ybar_se;
    *value = b.norm();
    *se = norm_se(b, s);
  } else {
    *value = target == Target::kSlow ? e.var_x : e.var_y;
    *se = target == Target::kSlow ? e.var_x_se : e.var_y_se;
  }
}

std::string file_stem(const std::string& analysis) {
  std::string s = analysis;
  std::replace(s.begin(), s.end(), '-', '_');
  return s;
}

json run_sweep(RunContext& ctx, const std::string& name) {
  const bool vs_beta = name.ends_with("-vs-beta");
  const bool bias = name.starts_with("bias");
  const Target target = ctx.config.target;
  const std::vector<double>& grid = vs_beta ? ctx.config.betas
                                            : ctx.config.alphas;
  std::vector<double> series_vals;
  if (vs_beta) {
    series_vals = ctx.config.alphas.empty()
                      ? std::vector<double>{ctx.config.alpha_fixed}
                      : ctx.config.alphas;
  } else {
    series_vals = {ctx.config.beta_fixed};
  }

  const std::string quantity =
      bias ? (target == Target::kSlow ? "bias_x_norm" : "bias_ybar_norm")
           : (target == Target::kSlow ? "var_x_trace" : "var_y_trace");

  std::ostringstream csv_out;
  csv_out << "series,grid_value,measured,se,fitted,residual\n";
  json series_json = json::array();
  std::vector<plot::Series> chart;

  for (double fixed : series_vals) {
    std::vector<double> measured(grid.size()), se(grid.size());
    json points = json::array();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double alpha = vs_beta ? fixed : grid[i];
      const double beta = vs_beta ? grid[i] : fixed;
      const SweepPoint& p = cached_point(ctx, alpha, beta);
      headline_value(p, bias, target, &measured[i], &se[i]);
      points.push_back(point_to_json(p));
    }

    bool fitted = false;
    stats::ScalingFit fit;
    if (grid.size() >= 2) {
      const bool weighted =
          std::all_of(se.begin(), se.end(), [](double s) { return s > 0.0; });
      fit = stats::fit_scaling(grid, measured,
                               weighted ? se : std::vector<double>{},
                               stats::ScalingModel::kAffine);
      fitted = true;
    }

    for (std::size_t i = 0; i < grid.size(); ++i) {
      const double f = fitted ? stats::evaluate_fit(fit, grid[i])
                              : std::nan("");
      csv_out << io::format_double(fixed) << ',' << io::format_double(grid[i])
              << ',' << io::format_double(measured[i]) << ','
              << io::format_double(se[i]) << ',' << io::format_double(f) << ','
              << io::format_double(fitted ? measured[i] - f : std::nan(""))
              << '\n';
    }

    json sj;
    sj[vs_beta ? "alpha" : "beta"] = fixed;
    sj["measured"] = measured;
    sj["se"] = se;
    sj["fit"] = fitted ? json::parse(stats::fit_to_json(fit)) : json();
    sj["points"] = std::move(points);
    series_json.push_back(std::move(sj));

    plot::Series s;
    s.label = (vs_beta ? "alpha=" : "beta=") + fmt_g(fixed);
    s.x = grid;
    s.y = measured;
    chart.push_back(std::move(s));
  }

  const std::string stem = file_stem(name);
  io::write_file(out_path(ctx, stem + ".csv"), csv_out.str());
  record_file(ctx, stem + ".csv");

  json rep;
  rep["analysis"] = name;
  rep["target"] = target_name(target);
  rep["quantity"] = quantity;
  rep["grid_name"] = vs_beta ? "beta" : "alpha";
  rep["grid"] = grid;
  rep["n_steps"] = ctx.config.n_steps;
  rep["n_replicas"] = ctx.config.n_replicas;
  rep["series"] = std::move(series_json);
  io::write_file(out_path(ctx, stem + ".json"), rep.dump(1) + "\n");
  record_file(ctx, stem + ".json");

  plot::ChartSpec spec;
  spec.title = name + " (" + target_name(target) + " iterate)";
  spec.x_label = vs_beta ? "beta" : "alpha";
  spec.y_label = quantity;
  plot::save_line_chart(spec, chart, out_path(ctx, stem + ".svg"));
  record_file(ctx, stem + ".svg");

  json stage;
  stage["quantity"] = quantity;
  stage["points"] = grid.size() * series_vals.size();
  return stage;
}

TailErrorCurves build_error_curves(RunContext& ctx, double alpha, double beta) {
  const model::ProblemInstance& inst = ctx.instance;
  const Pairing pairing = ctx.config.pairing;
  const long n_steps = ctx.config.n_steps;
  const long t0 = warmup_steps(ctx.config.warmup_factor, alpha,
                               inst.constants().mu_x, n_steps);

  const auto& a = cached_tail_ensemble(ctx, alpha, beta, t0);
  const std::vector<engine::TailResult>* b = nullptr;
  const std::vector<engine::TailResult>* c = nullptr;
  if (pairing != Pairing::kAlphaBeta) {
    b = &cached_tail_ensemble(ctx, alpha, 2.0 * beta, t0);
  }
  if (pairing != Pairing::kBetaOnly) {
    c = &cached_tail_ensemble(ctx, 2.0 * alpha, 2.0 * beta, t0);
  }

  const int r = static_cast<int>(a.size());
  std::vector<int> usable;
  for (int k = 0; k < r; ++k) {
    const bool ok = !a[k].diverged && (!b || !(*b)[k].diverged) &&
                    (!c || !(*c)[k].diverged);
    if (ok) usable.push_back(k);
  }
  TailErrorCurves curves;
  curves.alpha = alpha;
  curves.beta = beta;
  curves.t0 = t0;
  curves.n_used = static_cast<int>(usable.size());
  curves.n_diverged = r - curves.n_used;
  enforce_divergence_policy(curves.n_diverged, r);

  curves.t = a.front().checkpoints;
  const std::size_t n_cp = curves.t.size();
  curves.ta_x.assign(n_cp, 0.0);
  curves.ta_y.assign(n_cp, 0.0);
  if (b) {
    curves.rr_beta_x.assign(n_cp, 0.0);
    curves.rr_beta_y.assign(n_cp, 0.0);
  }
  if (c) {
    curves.rr_ab_x.assign(n_cp, 0.0);
    curves.rr_ab_y.assign(n_cp, 0.0);
  }

  // Absolute error of the ensemble-mean estimator: average the tail
  // averages over replicas first, then take the distance to the target.
  const Eigen::VectorXd& xs = inst.x_star;
  const Eigen::VectorXd& ys = inst.y_star;
  const double inv = 1.0 / curves.n_used;
  for (std::size_t i = 0; i < n_cp; ++i) {
    Eigen::VectorXd ax = Eigen::VectorXd::Zero(inst.d_x);
    Eigen::VectorXd ay = Eigen::VectorXd::Zero(inst.d_y);
    Eigen::VectorXd bx = ax, by = ay, cx = ax, cy = ay;
    for (int k : usable) {
      ax += a[k].x_avg[i];
      ay += a[k].y_avg[i];
      if (b) {
        bx += (*b)[k].x_avg[i];
        by += (*b)[k].y_avg[i];
      }
      if (c) {
        cx += (*c)[k].x_avg[i];
        cy += (*c)[k].y_avg[i];
      }
    }
    curves.ta_x[i] = (inv * ax - xs).norm();
    curves.ta_y[i] = (inv * ay - ys).norm();
    if (b) {
      curves.rr_beta_x[i] = (inv * (2.0 * ax - bx) - xs).norm();
      curves.rr_beta_y[i] = (inv * (2.0 * ay - by) - ys).norm();
    }
    if (c) {
      curves.rr_ab_x[i] = (inv * (2.0 * ax - cx) - xs).norm();
      curves.rr_ab_y[i] = (inv * (2.0 * ay - cy) - ys).norm();
    }
  }

  const long threshold = n_steps - n_steps / 10;
  auto tail_mean = [&](const std::vector<double>& v) {
    double s = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < n_cp; ++i) {
      if (curves.t[i] >= threshold) {
        s += v[i];
        ++n;
      }
    }
    return s / std::max(n, 1);
  };
  curves.tail_ta_x = tail_mean(curves.ta_x);
  curves.tail_ta_y = tail_mean(curves.ta_y);
  if (b) {
    curves.tail_rr_beta_x = tail_mean(curves.rr_beta_x);
    curves.tail_rr_beta_y = tail_mean(curves.rr_beta_y);
  }
  if (c) {
    curves.tail_rr_ab_x = tail_mean(curves.rr_ab_x);
    curves.tail_rr_ab_y = tail_mean(curves.rr_ab_y);
  }
  return curves;
}

json run_ta_vs_rr(RunContext& ctx) {
  const double alpha = ctx.config.alpha_fixed;
  const Pairing pairing = ctx.config.pairing;
  const bool has_b = pairing != Pairing::kAlphaBeta;
  const bool has_c = pairing != Pairing::kBetaOnly;

  std::vector<TailErrorCurves> all;
  all.reserve(ctx.config.betas.size());
  for (double beta : ctx.config.betas) {
    all.push_back(build_error_curves(ctx, alpha, beta));
  }

  std::ostringstream csv_out;
  csv_out << "beta,t,ta_x,ta_y";
  if (has_b) csv_out << ",rr_beta_x,rr_beta_y";
  if (has_c) csv_out << ",rr_alphabeta_x,rr_alphabeta_y";
  csv_out << '\n';
  for (const auto& cur : all) {
    for (std::size_t i = 0; i < cur.t.size(); ++i) {
      csv_out << io::format_double(cur.beta) << ',' << cur.t[i] << ','
              << io::format_double(cur.ta_x[i]) << ','
              << io::format_double(cur.ta_y[i]);
      if (has_b) {
        csv_out << ',' << io::format_double(cur.rr_beta_x[i]) << ','
                << io::format_double(cur.rr_beta_y[i]);
      }
      if (has_c) {
        csv_out << ',' << io::format_double(cur.rr_ab_x[i]) << ','
                << io::format_double(cur.rr_ab_y[i]);
      }
      csv_out << '\n';
    }
  }
  io::write_file(out_path(ctx, "ta_vs_rr.csv"), csv_out.str());
  record_file(ctx, "ta_vs_rr.csv");

  json rep;
  rep["analysis"] = "ta-vs-rr";
  rep["alpha"] = alpha;
  rep["pairing"] = pairing_name(pairing);
  rep["n_steps"] = ctx.config.n_steps;
  rep["n_replicas"] = ctx.config.n_replicas;
  json per_beta = json::array();
  for (const auto& cur : all) {
    json jb;
    jb["beta"] = cur.beta;
    jb["t0"] = cur.t0;
    jb["n_used"] = cur.n_used;
    jb["n_diverged"] = cur.n_diverged;
    json tails;
    tails["ta_x"] = cur.tail_ta_x;
    tails["ta_y"] = cur.tail_ta_y;
    if (has_b) {
      tails["rr_beta_x"] = cur.tail_rr_beta_x;
      tails["rr_beta_y"] = cur.tail_rr_beta_y;
      jb["ratio_ta_over_rr_beta_x"] = cur.tail_ta_x / cur.tail_rr_beta_x;
    }
    if (has_c) {
      tails["rr_alphabeta_x"] = cur.tail_rr_ab_x;
      tails["rr_alphabeta_y"] = cur.tail_rr_ab_y;
      jb["ratio_ta_over_rr_alphabeta_x"] = cur.tail_ta_x / cur.tail_rr_ab_x;
    }
    jb["tail"] = std::move(tails);
    per_beta.push_back(std::move(jb));
  }
  rep["per_beta"] = std::move(per_beta);
  if (all.size() >= 2) {
    std::vector<double> bs, ta, rb, rc;
    for (const auto& cur : all) {
      bs.push_back(cur.beta);
      ta.push_back(cur.tail_ta_x);
      if (has_b) rb.push_back(cur.tail_rr_beta_x);
      if (has_c) rc.push_back(cur.tail_rr_ab_x);
    }
    rep["fit_ta_x_vs_beta"] = json::parse(stats::fit_to_json(
        stats::fit_scaling(bs, ta, {}, stats::ScalingModel::kAffine)));
    if (has_b) {
      rep["fit_rr_beta_x_vs_beta"] = json::parse(stats::fit_to_json(
          stats::fit_scaling(bs, rb, {}, stats::ScalingModel::kAffine)));
    }
    if (has_c) {
      rep["fit_rr_alphabeta_x_vs_beta"] = json::parse(stats::fit_to_json(
          stats::fit_scaling(bs, rc, {}, stats::ScalingModel::kAffine)));
    }
  }
  io::write_file(out_path(ctx, "ta_vs_rr.json"), rep.dump(1) + "\n");
  record_file(ctx, "ta_vs_rr.json");

  std::vector<plot::Series> chart;
  for (const auto& cur : all) {
    std::vector<double> td(cur.t.begin(), cur.t.end());
    chart.push_back({"TA beta=" + fmt_g(cur.beta), td, cur.ta_x});
    if (has_b) {
      chart.push_back({"RR beta=" + fmt_g(cur.beta) + "," +
                           fmt_g(2.0 * cur.beta),
                       td, cur.rr_beta_x});
    }
    if (has_c) {
      chart.push_back({"RR alpha,beta=" + fmt_g(cur.beta), td, cur.rr_ab_x});
    }
  }
  plot::ChartSpec spec;
  spec.title = "tail-averaged absolute error, slow iterate";
  spec.x_label = "t";
  spec.y_label = "mean ||x_avg - x*||";
  spec.log_y = true;
  plot::save_line_chart(spec, chart, out_path(ctx, "ta_vs_rr.svg"));
  record_file(ctx, "ta_vs_rr.svg");

  json stage;
  stage["betas"] = ctx.config.betas;
  return stage;
}

json run_coupling(RunContext& ctx) {
  const double alpha = ctx.config.alpha_fixed;
  const double beta = ctx.config.beta_fixed;
  const model::ProblemInstance& inst = ctx.instance;

  engine::SimConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.n_steps = ctx.config.n_steps;
  cfg.record_every = 0;
  cfg.seed = rng::split(ctx.config.seed, kTagCoupling);
  cfg.initial = engine::InitialCondition::ball(ctx.config.coupling_radius);
  const auto second =
      engine::InitialCondition::ball(ctx.config.coupling_radius);
  const engine::CouplingCurve curve = engine::coupled_ensemble_curve(
      inst, cfg, second, ctx.config.n_pairs, ctx.threads);

  // Fit the decay on a window that skips the fast transient and stops well
  // above the numerical floor.
  const double mu_y = inst.constants().mu_y;
  const long skip = static_cast<long>(std::ceil(1.0 / (beta * mu_y)));
  const double top = curve.mean_sq_delta_x.empty()
                         ? 0.0
                         : curve.mean_sq_delta_x.front();
  std::vector<double> ft, fy;
  std::vector<char> in_window(curve.t.size(), 0);
  for (std::size_t i = 0; i < curve.t.size(); ++i) {
    const double v = curve.mean_sq_delta_x[i];
    if (curve.t[i] >= skip && v > 0.0 && v >= top * 1e-20) {
      ft.push_back(static_cast<double>(curve.t[i]));
      fy.push_back(v);
      in_window[i] = 1;
    }
  }
  if (ft.size() < 3) {
    throw ValidationError(
        "coupling-decay fit window is too short; increase n_steps or the "
        "initial radius");
  }
  const stats::ScalingFit fit =
      stats::fit_scaling(ft, fy, {}, stats::ScalingModel::kExponential);
  const double rate = -fit.slope;
  const double band_rate = alpha * inst.constants().mu_x / 16.0;

  std::ostringstream csv_out;
  csv_out << "t,msd_x,msd_ybar,fitted_x,in_fit_window\n";
  for (std::size_t i = 0; i < curve.t.size(); ++i) {
    csv_out << curve.t[i] << ','
            << io::format_double(curve.mean_sq_delta_x[i]) << ','
            << io::format_double(curve.mean_sq_delta_ybar[i]) << ','
            << io::format_double(stats::evaluate_fit(
                   fit, static_cast<double>(curve.t[i])))
            << ',' << static_cast<int>(in_window[i]) << '\n';
  }
  io::write_file(out_path(ctx, "coupling_decay.csv"), csv_out.str());
  record_file(ctx, "coupling_decay.csv");

  json rep;
  rep["analysis"] = "coupling-decay";
  rep["alpha"] = alpha;
  rep["beta"] = beta;
  rep["n_pairs"] = curve.n_pairs;
  rep["n_steps"] = ctx.config.n_steps;
  rep["fit"] = json::parse(stats::fit_to_json(fit));
  rep["decay_rate"] = rate;
  rep["band_rate"] = band_rate;
  rep["band_pass"] = rate >= band_rate;
  rep["fit_window"] = {ft.front(), ft.back()};
  io::write_file(out_path(ctx, "coupling_decay.json"), rep.dump(1) + "\n");
  record_file(ctx, "coupling_decay.json");

  std::vector<double> td(curve.t.begin(), curve.t.end());
  std::vector<plot::Series> chart;
  chart.push_back({"msd x", td, curve.mean_sq_delta_x});
  chart.push_back({"msd y-bar", td, curve.mean_sq_delta_ybar});
  std::vector<double> fitted(ft.size());
  for (std::size_t i = 0; i < ft.size(); ++i) {
    fitted[i] = stats::evaluate_fit(fit, ft[i]);
  }
  chart.push_back({"fit", ft, fitted});
  plot::ChartSpec spec;
  spec.title = "coupled-pair mean squared distance";
  spec.x_label = "t";
  spec.y_label = "mean squared distance";
  spec.log_y = true;
  plot::save_line_chart(spec, chart, out_path(ctx, "coupling_decay.svg"));
  record_file(ctx, "coupling_decay.svg");

  json stage;
  stage["decay_rate"] = rate;
  stage["band_pass"] = rate >= band_rate;
  return stage;
}

json run_oracle_comparison(RunContext& ctx) {
  const double alpha = ctx.config.alpha_fixed;
  const double beta = ctx.config.beta_fixed;
  const model::ProblemInstance& inst = ctx.instance;

  const moments::StationaryMoments oracle =
      moments::stationary_second_moments(inst, alpha, beta);
  const SweepPoint& point = cached_point(ctx, alpha, beta);
  const stats::BiasVarianceEstimate& est = point.estimate;

  struct Row {
    std::string quantity;
    int index;
    double oracle, measured, se;
  };
  std::vector<Row> rows;
  for (Eigen::Index j = 0; j < inst.d_x; ++j) {
    rows.push_back({"bias_x", static_cast<int>(j), oracle.first.bias_x(j),
                    est.bias_x(j), est.bias_x_se(j)});
  }
  for (Eigen::Index j = 0; j < inst.d_y; ++j) {
    rows.push_back({"bias_ybar", static_cast<int>(j),
                    oracle.first.bias_ybar(j), est.bias_ybar(j),
                    est.bias_ybar_se(j)});
  }
  rows.push_back({"var_x_trace", 0, oracle.var_x_trace, est.var_x,
                  est.var_x_se});
  rows.push_back({"var_y_trace", 0, oracle.var_y_trace, est.var_y,
                  est.var_y_se});

  auto z_of = [](const Row& r) {
    const double diff = r.measured - r.oracle;
    if (r.se > 0.0) return diff / r.se;
    return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  };

  std::ostringstream csv_out;
  csv_out << "quantity,index,oracle,measured,se,z\n";
  double max_abs_z = 0.0;
  for (const Row& r : rows) {
    const double z = z_of(r);
    max_abs_z = std::max(max_abs_z, std::abs(z));
    csv_out << r.quantity << ',' << r.index << ','
            << io::format_double(r.oracle) << ','
            << io::format_double(r.measured) << ',' << io::format_double(r.se)
            << ',' << io::format_double(z) << '\n';
  }
  io::write_file(out_path(ctx, "oracle_comparison.csv"), csv_out.str());
  record_file(ctx, "oracle_comparison.csv");

  json rep;
  rep["analysis"] = "oracle-comparison";
  rep["alpha"] = alpha;
  rep["beta"] = beta;
  rep["n_steps"] = ctx.config.n_steps;
  rep["n_replicas"] = point.n_replicas;
  rep["n_diverged"] = point.n_diverged;
  rep["t0"] = point.t0;
  rep["max_abs_z"] = max_abs_z;
  rep["within_3se"] = max_abs_z <= 3.0;
  rep["spectral_radius_first"] = oracle.first.radius_first;
  rep["spectral_radius_second"] = oracle.radius_second;
  json jrows = json::array();
  for (const Row& r : rows) {
    json jr;
    jr["quantity"] = r.quantity;
    jr["index"] = r.index;
    jr["oracle"] = r.oracle;
    jr["measured"] = r.measured;
    jr["se"] = r.se;
    jr["z"] = z_of(r);
    jrows.push_back(std::move(jr));
  }
  rep["rows"] = std::move(jrows);
  io::write_file(out_path(ctx, "oracle_comparison.json"), rep.dump(1) + "\n");
  record_file(ctx, "oracle_comparison.json");

  std::vector<double> idx(rows.size()), ov(rows.size()), mv(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    idx[i] = static_cast<double>(i);
    ov[i] = rows[i].oracle;
    mv[i] = rows[i].measured;
  }
  plot::ChartSpec spec;
  spec.title = "oracle vs measured stationary statistics";
  spec.x_label = "quantity index";
  spec.y_label = "value";
  plot::save_line_chart(spec, {{"oracle", idx, ov}, {"measured", idx, mv}},
                        out_path(ctx, "oracle_comparison.svg"));
  record_file(ctx, "oracle_comparison.svg");

  json stage;
  stage["max_abs_z"] = max_abs_z;
  stage["within_3se"] = max_abs_z <= 3.0;
  return stage;
}

RunStatus classify_error(const std::exception& e) {
  if (dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const FeasibilityError*>(&e) ||
      dynamic_cast<const StabilityError*>(&e) ||
      dynamic_cast<const ErgodicityError*>(&e) ||
      dynamic_cast<const SingularityError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e) ||
      dynamic_cast<const DesignError*>(&e) ||
      dynamic_cast<const ParseError*>(&e)) {
    return RunStatus::kValidationFailed;
  }
  return RunStatus::kRuntimeFailed;
}

json instance_summary(const model::ProblemInstance& inst) {
  const spectral::SpectralConstants& c = inst.constants();
  json j;
  j["d_x"] = inst.d_x;
  j["d_y"] = inst.d_y;
  j["n_states"] = inst.n_states();
  j["mu_x"] = c.mu_x;
  j["mu_y"] = c.mu_y;
  j["j_max"] = c.j_max;
  j["kappa_x"] = c.kappa_x;
  j["kappa_y"] = c.kappa_y;
  j["rho"] = inst.markov.rho;
  j["c_rho"] = inst.markov.c_rho;
  j["sigma_x"] = inst.sigma_x;
  j["sigma_y"] = inst.sigma_y;
  j["x_star"] = vec_to_json(inst.x_star);
  j["y_star"] = vec_to_json(inst.y_star);
  return j;
}

}  // namespace

ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.name = name;
  if (name == "fig1" || name == "fig2") {
    c.target = name == "fig1" ? Target::kSlow : Target::kFast;
    c.analyses = {"bias-vs-beta", "variance-vs-beta", "bias-vs-alpha",
                  "variance-vs-alpha"};
    c.betas = {0.03, 0.04, 0.05, 0.06, 0.07};
    c.alphas = {1e-4, 3e-4, 5e-4};
    c.alpha_fixed = 3e-4;
    c.beta_fixed = 0.05;
  } else if (name == "fig5") {
    c.analyses = {"ta-vs-rr"};
    c.betas = {0.01, 0.02, 0.04, 0.08};
    c.alpha_fixed = 3e-4;
    c.pairing = Pairing::kBetaOnly;
  } else if (name == "fig6") {
    c.analyses = {"ta-vs-rr"};
    c.betas = {0.02};
    c.alpha_fixed = 3e-4;
    c.pairing = Pairing::kBoth;
  } else {
    throw ValidationError("unknown preset '" + name +
                          "' (fig1, fig2, fig5, fig6)");
  }
  return c;
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["schema"] = c.schema;
  j["name"] = c.name;
  j["target"] = target_name(c.target);
  if (!c.instance_path.empty()) {
    j["instance"] = {{"path", c.instance_path}};
  } else {
    const GenerateSpec& g = c.generate;
    const model::InstanceParams& p = g.params;
    j["instance"] = {
        {"generate",
         {{"d_x", g.d_x},
          {"d_y", g.d_y},
          {"n_states", g.n_states},
          {"seed", g.seed},
          {"params",
           {{"eig_delta", {p.eig_delta_lo, p.eig_delta_hi}},
            {"eig_j22", {p.eig_j22_lo, p.eig_j22_hi}},
            {"noise_scale", p.noise_scale},
            {"coupling_scale", p.coupling_scale},
            {"min_entry", p.min_entry}}}}}};
  }
  j["analyses"] = c.analyses;
  j["alphas"] = c.alphas;
  j["betas"] = c.betas;
  j["alpha_fixed"] = c.alpha_fixed;
  j["beta_fixed"] = c.beta_fixed;
  j["pairing"] = pairing_name(c.pairing);
  j["n_steps"] = c.n_steps;
  j["n_replicas"] = c.n_replicas;
  j["warmup_factor"] = c.warmup_factor;
  j["n_checkpoints"] = c.n_checkpoints;
  j["n_pairs"] = c.n_pairs;
  j["coupling_radius"] = c.coupling_radius;
  j["c1"] = c.c1;
  j["c2"] = c.c2;
  j["seed"] = c.seed;
  return j.dump(1) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  try {
    c.schema = j.at("schema").get<int>();
    if (j.contains("name")) c.name = j.at("name").get<std::string>();
    if (j.contains("target")) {
      c.target = target_from(j.at("target").get<std::string>());
    }
    if (j.contains("instance")) {
      const json& inst = j.at("instance");
      if (inst.contains("path")) {
        c.instance_path = inst.at("path").get<std::string>();
      } else if (inst.contains("generate")) {
        const json& g = inst.at("generate");
        c.generate.d_x = g.at("d_x").get<int>();
        c.generate.d_y = g.at("d_y").get<int>();
        c.generate.n_states = g.at("n_states").get<int>();
        c.generate.seed = g.at("seed").get<std::uint64_t>();
        if (g.contains("params")) {
          const json& p = g.at("params");
          model::InstanceParams& ip = c.generate.params;
          if (p.contains("eig_delta")) {
            ip.eig_delta_lo = p.at("eig_delta").at(0).get<double>();
            ip.eig_delta_hi = p.at("eig_delta").at(1).get<double>();
          }
          if (p.contains("eig_j22")) {
            ip.eig_j22_lo = p.at("eig_j22").at(0).get<double>();
            ip.eig_j22_hi = p.at("eig_j22").at(1).get<double>();
          }
          if (p.contains("noise_scale")) {
            ip.noise_scale = p.at("noise_scale").get<double>();
          }
          if (p.contains("coupling_scale")) {
            ip.coupling_scale = p.at("coupling_scale").get<double>();
          }
          if (p.contains("min_entry")) {
            ip.min_entry = p.at("min_entry").get<double>();
          }
        }
      } else {
        throw ValidationError("instance must name a path or a generate spec");
      }
    }
    if (j.contains("analyses")) {
      c.analyses = j.at("analyses").get<std::vector<std::string>>();
    }
    if (j.contains("alphas")) c.alphas = j.at("alphas").get<std::vector<double>>();
    if (j.contains("betas")) c.betas = j.at("betas").get<std::vector<double>>();
    if (j.contains("alpha_fixed")) c.alpha_fixed = j.at("alpha_fixed").get<double>();
    if (j.contains("beta_fixed")) c.beta_fixed = j.at("beta_fixed").get<double>();
    if (j.contains("pairing")) {
      c.pairing = pairing_from(j.at("pairing").get<std::string>());
    }
    if (j.contains("n_steps")) c.n_steps = j.at("n_steps").get<long>();
    if (j.contains("n_replicas")) c.n_replicas = j.at("n_replicas").get<int>();
    if (j.contains("warmup_factor")) {
      c.warmup_factor = j.at("warmup_factor").get<double>();
    }
    if (j.contains("n_checkpoints")) {
      c.n_checkpoints = j.at("n_checkpoints").get<int>();
    }
    if (j.contains("n_pairs")) c.n_pairs = j.at("n_pairs").get<int>();
    if (j.contains("coupling_radius")) {
      c.coupling_radius = j.at("coupling_radius").get<double>();
    }
    if (j.contains("c1")) c.c1 = j.at("c1").get<double>();
    if (j.contains("c2")) c.c2 = j.at("c2").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed config field: ") + e.what());
  }
  validate_config(c);
  return c;
}

void save_config(const ExperimentConfig& config, const std::string& path) {
  io::write_file(path, config_to_json(config));
}

ExperimentConfig load_config(const std::string& path) {
  return config_from_json(io::read_file(path));
}

SweepPoint measure_point(const model::ProblemInstance& instance, double alpha,
                         double beta, long n_steps, int n_replicas,
                         double warmup_factor, std::uint64_t seed,
                         int threads) {
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw ValidationError("stepsizes must be positive");
  }
  if (n_replicas < 2) throw ValidationError("need at least two replicas");
  const long t0 =
      warmup_steps(warmup_factor, alpha, instance.constants().mu_x, n_steps);

  engine::SimConfig cfg;
  cfg.alpha = alpha;
  cfg.beta = beta;
  cfg.n_steps = n_steps;
  cfg.seed = seed;
  cfg.initial = engine::InitialCondition::ball(1.0);
  engine::TailSpec spec;
  spec.t0 = t0;
  spec.checkpoints = {n_steps};

  const auto tails =
      engine::simulate_tail_ensemble(instance, cfg, spec, n_replicas, threads);

  SweepPoint point;
  point.alpha = alpha;
  point.beta = beta;
  point.t0 = t0;
  point.n_replicas = n_replicas;
  std::vector<stats::ReplicaSummary> reps;
  reps.reserve(tails.size());
  for (const auto& r : tails) {
    if (r.diverged) {
      ++point.n_diverged;
      continue;
    }
    stats::ReplicaSummary s;
    s.tail.alpha = alpha;
    s.tail.beta = beta;
    s.tail.t0 = t0;
    s.tail.t = n_steps;
    s.tail.x = r.x_avg.front();
    s.tail.y = r.y_avg.front();
    s.x_final = r.x_final;
    s.y_final = r.y_final;
    reps.push_back(std::move(s));
  }
  if (reps.size() < 2) {
    std::ostringstream os;
    os << "ensemble unusable: " << point.n_diverged << " of " << n_replicas
       << " replicas diverged";
    throw DivergenceError(os.str());
  }
  point.estimate = stats::estimate_bias_variance(
      instance, reps, rng::split(seed, kTagBootstrap));
  return point;
}

RunOutcome run_experiment(const ExperimentConfig& config,
                          const std::string& out_dir, int threads) {
  RunOutcome out;
  std::filesystem::create_directories(out_dir);
  threads = std::max(threads, 1);

  json manifest;
  manifest["version"] = kVersion;
  manifest["threads"] = threads;
  manifest["config"] = json::parse(config_to_json(config));
  json stages = json::array();

  auto finish = [&](RunStatus status, const std::string& message) {
    out.status = status;
    out.message = message;
    manifest["analyses"] = stages;
    manifest["exit_code"] = static_cast<int>(status);
    manifest["status"] = status == RunStatus::kOk ? "ok"
                         : status == RunStatus::kValidationFailed
                             ? "validation-failed"
                             : "runtime-failed";
    manifest["message"] = message;
    out.files.push_back("manifest.json");
    manifest["files"] = out.files;
    const std::string path =
        (std::filesystem::path(out_dir) / "manifest.json").string();
    io::write_file(path, manifest.dump(1) + "\n");
    out.manifest_path = path;
    return out;
  };

  try {
    validate_config(config);
  } catch (const std::exception& e) {
    return finish(classify_error(e), e.what());
  }

  model::ProblemInstance instance;
  try {
    if (!config.instance_path.empty()) {
      instance = model::load_instance(config.instance_path);
      manifest["instance_source"] = {{"path", config.instance_path}};
    } else {
      const GenerateSpec& g = config.generate;
      instance = model::random_instance(g.d_x, g.d_y, g.n_states, g.seed,
                                        g.params);
      manifest["instance_source"] = {{"generate", {{"seed", g.seed}}}};
    }
  } catch (const std::exception& e) {
    return finish(classify_error(e),
                  std::string("instance setup failed: ") + e.what());
  }
  manifest["instance"] = instance_summary(instance);

  RunContext ctx{config,
                 instance,
                 out_dir,
                 threads,
                 rng::split(config.seed, kTagSweep),
                 rng::split(config.seed, kTagTailCurves),
                 {},
                 {},
                 &out.files};

  try {
    save_config(config, out_path(ctx, "config.json"));
    record_file(ctx, "config.json");
    model::save_instance(instance, out_path(ctx, "instance.json"));
    record_file(ctx, "instance.json");
  } catch (const std::exception& e) {
    return finish(RunStatus::kRuntimeFailed, e.what());
  }

  RunStatus status = RunStatus::kOk;
  std::string message;
  for (const std::string& name : config.analyses) {
    const auto start = std::chrono::steady_clock::now();
    json stage;
    stage["name"] = name;
    try {
      json detail;
      if (name == "ta-vs-rr") {
        detail = run_ta_vs_rr(ctx);
      } else if (name == "coupling-decay") {
        detail = run_coupling(ctx);
      } else if (name == "oracle-comparison") {
        detail = run_oracle_comparison(ctx);
      } else {
        detail = run_sweep(ctx, name);
      }
      stage["detail"] = std::move(detail);
      stage["status"] = "ok";
    } catch (const std::exception& e) {
      stage["status"] = "failed";
      stage["error"] = e.what();
      status = classify_error(e);
      message = name + ": " + e.what();
    }
    const std::chrono::duration<double> dt =
        std::chrono::steady_clock::now() - start;
    stage["seconds"] = dt.count();
    stages.push_back(std::move(stage));
    if (status != RunStatus::kOk) break;
  }

  // Stepsize feasibility for every pair that was simulated; reported only.
  json feas = json::array();
  std::map<std::pair<double, double>, bool> pairs;
  pairs[{config.alpha_fixed, config.beta_fixed}] = true;
  for (const auto& kv : ctx.sweep_cache) pairs[kv.first] = true;
  for (const auto& kv : ctx.tail_cache) {
    pairs[{std::get<0>(kv.first), std::get<1>(kv.first)}] = true;
  }
  for (const auto& kv : pairs) {
    const model::StepsizeReport r = model::validate_stepsizes(
        instance, kv.first.first, kv.first.second, config.c1, config.c2);
    json jr;
    jr["alpha"] = r.alpha;
    jr["beta"] = r.beta;
    jr["tau"] = r.tau;
    jr["m1"] = r.m1;
    jr["m2"] = r.m2;
    jr["feasible"] = r.feasible;
    feas.push_back(std::move(jr));
  }
  manifest["stepsize_feasibility"] = std::move(feas);
  manifest["seeds"] = {{"run", config.seed},
                       {"sweeps", ctx.sweep_base},
                       {"tail_curves", ctx.curves_base},
                       {"coupling", rng::split(config.seed, kTagCoupling)}};

  return finish(status, message);
}

}  // namespace ttsa::experiments
