#include "ttsa/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ttsa/errors.hpp"

namespace ttsa::model {

namespace {

using nlohmann::json;

// Sub-stream purposes of the instance generator.  Frozen: renumbering would
// silently change every generated instance.
enum StreamId : std::uint64_t {
  kStreamChain = 1,
  kStreamDeltaEigs = 2,
  kStreamDeltaBasis = 3,
  kStreamJ22Eigs = 4,
  kStreamJ22Basis = 5,
  kStreamCouplings = 6,
  kStreamOffsets = 7,
  kStreamNoiseW = 8,
  kStreamNoiseU = 9,
};

void require_per_state(std::size_t n_states, std::size_t got, const char* what) {
  if (got != n_states) {
    std::ostringstream os;
    os << what << " has " << got << " blocks, expected one per state ("
       << n_states << ")";
    throw DimensionError(os.str());
  }
}

void require_shape(const Eigen::MatrixXd& m, Eigen::Index rows,
                   Eigen::Index cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    std::ostringstream os;
    os << what << " must be " << rows << "x" << cols << ", got " << m.rows()
       << "x" << m.cols();
    throw DimensionError(os.str());
  }
  if (!m.allFinite()) {
    throw ValidationError(std::string(what) + " has non-finite entries");
  }
}

// Subtracts the pi-weighted mean from each per-state block unless it is
// already zero within 1e-12; the skip keeps reloading a stored instance an
// exact no-op.
template <typename T>
void center_blocks(std::vector<T>& blocks, const Eigen::VectorXd& pi) {
  T mean = blocks[0] * pi(0);
  for (std::size_t s = 1; s < blocks.size(); ++s) {
    mean += blocks[s] * pi(static_cast<Eigen::Index>(s));
  }
  if (mean.cwiseAbs().maxCoeff() > 1e-12) {
    for (auto& b : blocks) b -= mean;
  }
}

// Single code path for the stationary noise magnitudes: largest noise norm
// over states, evaluated at the fixed point.
double noise_scale_at(const std::vector<Eigen::MatrixXd>& wa,
                      const std::vector<Eigen::MatrixXd>& wb,
                      const std::vector<Eigen::VectorXd>& u,
                      const Eigen::VectorXd& x_star,
                      const Eigen::VectorXd& y_star) {
  double worst = 0.0;
  for (std::size_t s = 0; s < u.size(); ++s) {
    worst = std::max(worst, (wa[s] * x_star + wb[s] * y_star + u[s]).norm());
  }
  return worst;
}

Eigen::MatrixXd random_orthogonal(Eigen::Index d, rng::Stream& stream) {
  const Eigen::MatrixXd g = stream.gaussian_matrix(d, d);
  return Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() *
         Eigen::MatrixXd::Identity(d, d);
}

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Eigen::MatrixXd matrix_from_json(const json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) {
    throw ParseError(std::string(what) + " must be an array of rows");
  }
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ParseError(std::string(what) + " has ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& cell = row[static_cast<std::size_t>(c)];
      if (!cell.is_number()) {
        throw ParseError(std::string(what) + " has a non-numeric entry");
      }
      m(i, c) = cell.get<double>();
    }
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& j, const char* what) {
  if (!j.is_array()) throw ParseError(std::string(what) + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw ParseError(std::string(what) + " has a non-numeric entry");
    }
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

const json& require_field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) {
    throw ParseError(std::string("instance JSON is missing field '") + key +
                     "'");
  }
  return *it;
}

}  // namespace

Eigen::VectorXd ProblemInstance::y_star_of(const Eigen::VectorXd& x) const {
  return -j22.partialPivLu().solve(j21 * x + b2);
}

ProblemInstance assemble_instance(Eigen::MatrixXd j11, Eigen::MatrixXd j12,
                                  Eigen::MatrixXd j21, Eigen::MatrixXd j22,
                                  Eigen::VectorXd b1, Eigen::VectorXd b2,
                                  chain::MarkovChain markov, NoiseField noise) {
  const Eigen::Index dx = j11.rows();
  const Eigen::Index dy = j22.rows();
  if (dx == 0 || dy == 0) {
    throw DimensionError("both iterates need at least one dimension");
  }
  require_shape(j11, dx, dx, "J11");
  require_shape(j12, dx, dy, "J12");
  require_shape(j21, dy, dx, "J21");
  require_shape(j22, dy, dy, "J22");
  if (b1.size() != dx || b2.size() != dy) {
    throw DimensionError("offset vectors do not match block dimensions");
  }
  if (!b1.allFinite() || !b2.allFinite()) {
    throw ValidationError("offset vector has non-finite entries");
  }

  const std::size_t ns = static_cast<std::size_t>(markov.n());
  require_per_state(ns, noise.w11.size(), "W11");
  require_per_state(ns, noise.w12.size(), "W12");
  require_per_state(ns, noise.w21.size(), "W21");
  require_per_state(ns, noise.w22.size(), "W22");
  require_per_state(ns, noise.u1.size(), "u1");
  require_per_state(ns, noise.u2.size(), "u2");
  for (std::size_t s = 0; s < ns; ++s) {
    require_shape(noise.w11[s], dx, dx, "W11 block");
    require_shape(noise.w12[s], dx, dy, "W12 block");
    require_shape(noise.w21[s], dy, dx, "W21 block");
    require_shape(noise.w22[s], dy, dy, "W22 block");
    if (noise.u1[s].size() != dx || noise.u2[s].size() != dy) {
      throw DimensionError("noise offset block has wrong dimension");
    }
    if (!noise.u1[s].allFinite() || !noise.u2[s].allFinite()) {
      throw ValidationError("noise offset has non-finite entries");
    }
  }

  ProblemInstance inst;
  inst.d_x = dx;
  inst.d_y = dy;
  inst.j11 = std::move(j11);
  inst.j12 = std::move(j12);
  inst.j21 = std::move(j21);
  inst.j22 = std::move(j22);
  inst.b1 = std::move(b1);
  inst.b2 = std::move(b2);
  inst.markov = std::move(markov);
  inst.noise = std::move(noise);

  center_blocks(inst.noise.w11, inst.markov.pi);
  center_blocks(inst.noise.w12, inst.markov.pi);
  center_blocks(inst.noise.w21, inst.markov.pi);
  center_blocks(inst.noise.w22, inst.markov.pi);
  center_blocks(inst.noise.u1, inst.markov.pi);
  center_blocks(inst.noise.u2, inst.markov.pi);

  inst.derived =
      spectral::derived_constants(inst.j11, inst.j12, inst.j21, inst.j22);

  double w_max = 0.0;
  for (std::size_t s = 0; s < ns; ++s) {
    w_max = std::max({w_max, spectral::operator_norm(inst.noise.w11[s]),
                      spectral::operator_norm(inst.noise.w12[s]),
                      spectral::operator_norm(inst.noise.w21[s]),
                      spectral::operator_norm(inst.noise.w22[s])});
  }
  const double j_max = inst.derived.constants.j_max;
  inst.noise.rescale = 1.0;
  if (w_max > j_max && w_max > 0.0) {
    inst.noise.rescale = j_max / w_max;
    for (std::size_t s = 0; s < ns; ++s) {
      inst.noise.w11[s] *= inst.noise.rescale;
      inst.noise.w12[s] *= inst.noise.rescale;
      inst.noise.w21[s] *= inst.noise.rescale;
      inst.noise.w22[s] *= inst.noise.rescale;
    }
    w_max = j_max;
  }
  inst.noise.w_max = w_max;
  inst.noise.u_max = 0.0;
  for (std::size_t s = 0; s < ns; ++s) {
    inst.noise.u_max = std::max(
        {inst.noise.u_max, inst.noise.u1[s].norm(), inst.noise.u2[s].norm()});
  }

  // Fixed point: delta x* = -(b1 - J12 J22^{-1} b2), y* = -J22^{-1}(J21 x* + b2),
  // each solve followed by one refinement pass.
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu22(inst.j22);
  const Eigen::PartialPivLU<Eigen::MatrixXd> lud(inst.derived.delta);
  const Eigen::VectorXd rhs_x = -(inst.b1 - inst.j12 * lu22.solve(inst.b2));
  Eigen::VectorXd xs = lud.solve(rhs_x);
  xs += lud.solve(rhs_x - inst.derived.delta * xs);
  Eigen::VectorXd ys = -lu22.solve(inst.j21 * xs + inst.b2);
  ys += -lu22.solve(inst.j21 * xs + inst.b2 + inst.j22 * ys);
  inst.x_star = xs;
  inst.y_star = ys;

  const double bnorm = std::sqrt(inst.b1.squaredNorm() + inst.b2.squaredNorm());
  const double fp_residual =
      (inst.j11 * xs + inst.j12 * ys + inst.b1).norm() +
      (inst.j21 * xs + inst.j22 * ys + inst.b2).norm();
  if (!(fp_residual <= 1e-10 * (1.0 + bnorm))) {
    std::ostringstream os;
    os << "fixed-point residual " << fp_residual
       << " exceeds tolerance; the system is too ill-conditioned";
    throw SingularityError(os.str());
  }

  inst.sigma_x = noise_scale_at(inst.noise.w11, inst.noise.w12, inst.noise.u1,
                                inst.x_star, inst.y_star);
  inst.sigma_y = noise_scale_at(inst.noise.w21, inst.noise.w22, inst.noise.u2,
                                inst.x_star, inst.y_star);
  return inst;
}

ProblemInstance random_instance(int d_x, int d_y, int n_states,
                                std::uint64_t seed,
                                const InstanceParams& params) {
  if (d_x <= 0 || d_y <= 0) {
    throw DimensionError("both iterates need at least one dimension");
  }
  if (n_states <= 0) throw DimensionError("need at least one chain state");
  if (params.eig_delta_lo <= 0.0 || params.eig_delta_hi < params.eig_delta_lo ||
      params.eig_j22_lo <= 0.0 || params.eig_j22_hi < params.eig_j22_lo) {
    throw ValidationError("eigenvalue ranges must be positive and ordered");
  }
  if (params.noise_scale < 0.0 || params.coupling_scale < 0.0) {
    throw ValidationError("scales must be nonnegative");
  }

  const Eigen::Index dx = d_x, dy = d_y;
  chain::MarkovChain markov =
      chain::random_chain(n_states, rng::split(seed, kStreamChain),
                          params.min_entry);

  rng::Stream s_deig(rng::split(seed, kStreamDeltaEigs));
  rng::Stream s_dbasis(rng::split(seed, kStreamDeltaBasis));
  rng::Stream s_jeig(rng::split(seed, kStreamJ22Eigs));
  rng::Stream s_jbasis(rng::split(seed, kStreamJ22Basis));
  rng::Stream s_coup(rng::split(seed, kStreamCouplings));
  rng::Stream s_off(rng::split(seed, kStreamOffsets));
  rng::Stream s_w(rng::split(seed, kStreamNoiseW));
  rng::Stream s_u(rng::split(seed, kStreamNoiseU));

  Eigen::VectorXd deig(dx);
  for (Eigen::Index i = 0; i < dx; ++i) {
    deig(i) = params.eig_delta_lo +
              (params.eig_delta_hi - params.eig_delta_lo) * s_deig.next_double();
  }
  Eigen::VectorXd jeig(dy);
  for (Eigen::Index i = 0; i < dy; ++i) {
    jeig(i) = params.eig_j22_lo +
              (params.eig_j22_hi - params.eig_j22_lo) * s_jeig.next_double();
  }
  const Eigen::MatrixXd qd = random_orthogonal(dx, s_dbasis);
  const Eigen::MatrixXd qj = random_orthogonal(dy, s_jbasis);
  const Eigen::MatrixXd delta_target = qd * deig.asDiagonal() * qd.transpose();
  const Eigen::MatrixXd j22 = qj * jeig.asDiagonal() * qj.transpose();

  const Eigen::MatrixXd j12 = params.coupling_scale * s_coup.gaussian_matrix(dx, dy);
  const Eigen::MatrixXd j21 = params.coupling_scale * s_coup.gaussian_matrix(dy, dx);
  const Eigen::MatrixXd j11 =
      delta_target + j12 * j22.partialPivLu().solve(j21);

  const Eigen::VectorXd b1 = s_off.gaussian_vector(dx);
  const Eigen::VectorXd b2 = s_off.gaussian_vector(dy);

  NoiseField noise;
  const std::size_t ns = static_cast<std::size_t>(n_states);
  noise.w11.reserve(ns);
  noise.w12.reserve(ns);
  noise.w21.reserve(ns);
  noise.w22.reserve(ns);
  noise.u1.reserve(ns);
  noise.u2.reserve(ns);
  for (std::size_t s = 0; s < ns; ++s) {
    noise.w11.push_back(params.noise_scale * s_w.gaussian_matrix(dx, dx));
    noise.w12.push_back(params.noise_scale * s_w.gaussian_matrix(dx, dy));
    noise.w21.push_back(params.noise_scale * s_w.gaussian_matrix(dy, dx));
    noise.w22.push_back(params.noise_scale * s_w.gaussian_matrix(dy, dy));
    noise.u1.push_back(params.noise_scale * s_u.gaussian_vector(dx));
    noise.u2.push_back(params.noise_scale * s_u.gaussian_vector(dy));
  }

  ProblemInstance inst = assemble_instance(j11, j12, j21, j22, b1, b2,
                                           std::move(markov), std::move(noise));
  inst.seed_info.present = true;
  inst.seed_info.seed = seed;
  inst.seed_info.params = params;
  return inst;
}

StepsizeReport validate_stepsizes(const ProblemInstance& instance, double alpha,
                                  double beta, double c1, double c2) {
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw ValidationError("stepsizes must be positive");
  }
  if (!(c1 > 0.0) || !(c2 > 0.0)) {
    throw ValidationError("feasibility constants must be positive");
  }
  const spectral::SpectralConstants& c = instance.constants();
  StepsizeReport r;
  r.alpha = alpha;
  r.beta = beta;
  r.c1 = c1;
  r.c2 = c2;
  r.tau = chain::mixing_time(instance.markov, alpha, c.mu_x).tau;
  r.m1 = c1 / (c.j_max * c.kappa_y * c.kappa_y * c.kappa_x * c.kappa_x) -
         beta * static_cast<double>(r.tau);
  r.m2 = c2 / (c.kappa_y * c.kappa_y * c.kappa_y * c.kappa_x) - alpha / beta;
  r.feasible = r.m1 >= 0.0 && r.m2 >= 0.0;
  return r;
}

OperatorValues evaluate_operators(const ProblemInstance& instance,
                                  const Eigen::VectorXd& x,
                                  const Eigen::VectorXd& y, int xi) {
  if (x.size() != instance.d_x || y.size() != instance.d_y) {
    throw DimensionError("iterate dimensions do not match the instance");
  }
  if (xi < 0 || xi >= instance.n_states()) {
    throw ValidationError("chain state out of range");
  }
  const std::size_t s = static_cast<std::size_t>(xi);
  OperatorValues v;
  v.f = instance.j11 * x + instance.j12 * y + instance.b1;
  v.g = instance.j21 * x + instance.j22 * y + instance.b2;
  v.wx = instance.noise.w11[s] * x + instance.noise.w12[s] * y +
         instance.noise.u1[s];
  v.wy = instance.noise.w21[s] * x + instance.noise.w22[s] * y +
         instance.noise.u2[s];
  return v;
}

std::string to_json(const ProblemInstance& inst) {
  json j;
  j["d_x"] = inst.d_x;
  j["d_y"] = inst.d_y;
  j["n_states"] = inst.n_states();
  j["J11"] = matrix_to_json(inst.j11);
  j["J12"] = matrix_to_json(inst.j12);
  j["J21"] = matrix_to_json(inst.j21);
  j["J22"] = matrix_to_json(inst.j22);
  j["b1"] = vector_to_json(inst.b1);
  j["b2"] = vector_to_json(inst.b2);
  j["kernel"] = matrix_to_json(inst.markov.kernel);
  json w11 = json::array(), w12 = json::array(), w21 = json::array(),
       w22 = json::array(), u1 = json::array(), u2 = json::array();
  for (int s = 0; s < inst.n_states(); ++s) {
    const std::size_t k = static_cast<std::size_t>(s);
    w11.push_back(matrix_to_json(inst.noise.w11[k]));
    w12.push_back(matrix_to_json(inst.noise.w12[k]));
    w21.push_back(matrix_to_json(inst.noise.w21[k]));
    w22.push_back(matrix_to_json(inst.noise.w22[k]));
    u1.push_back(vector_to_json(inst.noise.u1[k]));
    u2.push_back(vector_to_json(inst.noise.u2[k]));
  }
  j["W11"] = std::move(w11);
  j["W12"] = std::move(w12);
  j["W21"] = std::move(w21);
  j["W22"] = std::move(w22);
  j["u1"] = std::move(u1);
  j["u2"] = std::move(u2);
  if (inst.seed_info.present) {
    const InstanceParams& p = inst.seed_info.params;
    j["seed_info"] = {
        {"seed", inst.seed_info.seed},
        {"params",
         {{"eig_delta", {p.eig_delta_lo, p.eig_delta_hi}},
          {"eig_j22", {p.eig_j22_lo, p.eig_j22_hi}},
          {"noise_scale", p.noise_scale},
          {"coupling_scale", p.coupling_scale},
          {"min_entry", p.min_entry}}}};
  } else {
    j["seed_info"] = nullptr;
  }
  return j.dump(1);
}

void save_instance(const ProblemInstance& instance, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  out << to_json(instance) << '\n';
}

ProblemInstance parse_instance(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what());  // message carries the byte offset
  }
  if (!j.is_object()) throw ParseError("instance JSON must be an object");

  const Eigen::Index dx = require_field(j, "d_x").get<Eigen::Index>();
  const Eigen::Index dy = require_field(j, "d_y").get<Eigen::Index>();
  const int ns = require_field(j, "n_states").get<int>();
  if (dx <= 0 || dy <= 0 || ns <= 0) {
    throw ParseError("d_x, d_y, and n_states must be positive");
  }

  const Eigen::MatrixXd j11 = matrix_from_json(require_field(j, "J11"), "J11");
  const Eigen::MatrixXd j12 = matrix_from_json(require_field(j, "J12"), "J12");
  const Eigen::MatrixXd j21 = matrix_from_json(require_field(j, "J21"), "J21");
  const Eigen::MatrixXd j22 = matrix_from_json(require_field(j, "J22"), "J22");
  const Eigen::VectorXd b1 = vector_from_json(require_field(j, "b1"), "b1");
  const Eigen::VectorXd b2 = vector_from_json(require_field(j, "b2"), "b2");
  const Eigen::MatrixXd kernel =
      matrix_from_json(require_field(j, "kernel"), "kernel");

  NoiseField noise;
  const auto read_blocks = [&](const char* key, std::vector<Eigen::MatrixXd>& dst) {
    const json& arr = require_field(j, key);
    if (!arr.is_array() || static_cast<int>(arr.size()) != ns) {
      throw ParseError(std::string(key) + " must list one block per state");
    }
    for (const auto& b : arr) dst.push_back(matrix_from_json(b, key));
  };
  const auto read_vectors = [&](const char* key, std::vector<Eigen::VectorXd>& dst) {
    const json& arr = require_field(j, key);
    if (!arr.is_array() || static_cast<int>(arr.size()) != ns) {
      throw ParseError(std::string(key) + " must list one vector per state");
    }
    for (const auto& b : arr) dst.push_back(vector_from_json(b, key));
  };
  read_blocks("W11", noise.w11);
  read_blocks("W12", noise.w12);
  read_blocks("W21", noise.w21);
  read_blocks("W22", noise.w22);
  read_vectors("u1", noise.u1);
  read_vectors("u2", noise.u2);

  ProblemInstance inst =
      assemble_instance(j11, j12, j21, j22, b1, b2, chain::build_chain(kernel),
                        std::move(noise));
  if (inst.d_x != dx || inst.d_y != dy || inst.n_states() != ns) {
    throw ParseError("declared dimensions do not match the stored blocks");
  }

  const json& si = require_field(j, "seed_info");
  if (!si.is_null()) {
    inst.seed_info.present = true;
    inst.seed_info.seed = require_field(si, "seed").get<std::uint64_t>();
    const json& p = require_field(si, "params");
    InstanceParams& ip = inst.seed_info.params;
    ip.eig_delta_lo = require_field(p, "eig_delta")[0].get<double>();
    ip.eig_delta_hi = require_field(p, "eig_delta")[1].get<double>();
    ip.eig_j22_lo = require_field(p, "eig_j22")[0].get<double>();
    ip.eig_j22_hi = require_field(p, "eig_j22")[1].get<double>();
    ip.noise_scale = require_field(p, "noise_scale").get<double>();
    ip.coupling_scale = require_field(p, "coupling_scale").get<double>();
    ip.min_entry = require_field(p, "min_entry").get<double>();
  }
  return inst;
}

ProblemInstance load_instance(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open instance file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_instance(ss.str());
}

}  // namespace ttsa::model
