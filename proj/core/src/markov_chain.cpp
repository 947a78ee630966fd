#include "ttsa/markov_chain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ttsa/csv.hpp"
#include "ttsa/errors.hpp"

namespace ttsa::chain {

namespace {

// Fit horizon guard for kernels mixing extremely slowly; build time stays
// bounded and the paired decay tests never look past this many steps.
constexpr long kMaxFitHorizon = 1000000;

// Ratios err/rho^n stop being informative once err sits at the rounding
// floor; samples below this are excluded from the prefactor fit.
constexpr double kFitFloor = 1e-11;

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& p) {
  const Eigen::Index n = p.rows();
  Eigen::MatrixXd a = p.transpose() - Eigen::MatrixXd::Identity(n, n);
  a.row(n - 1).setOnes();
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
  b(n - 1) = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
  if (!lu.isInvertible()) {
    throw ErgodicityError("stationary distribution is not unique");
  }
  Eigen::VectorXd pi = lu.solve(b);
  // Two refinement passes sharpen the fixed-point residual.
  for (int it = 0; it < 2; ++it) {
    pi = (pi.transpose() * p).transpose();
    pi /= pi.sum();
  }
  return pi;
}

}  // namespace

MarkovChain build_chain(const Eigen::MatrixXd& kernel) {
  if (kernel.rows() == 0 || kernel.rows() != kernel.cols()) {
    std::ostringstream os;
    os << "kernel must be square and non-empty, got " << kernel.rows() << "x"
       << kernel.cols();
    throw DimensionError(os.str());
  }
  if (!kernel.allFinite()) {
    throw ValidationError("kernel has non-finite entries");
  }
  if ((kernel.array() < 0.0).any()) {
    throw ValidationError("kernel has negative entries");
  }
  const Eigen::Index n = kernel.rows();
  MarkovChain out;
  out.kernel = kernel;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = kernel.row(i).sum();
    if (std::abs(s - 1.0) > 1e-9) {
      std::ostringstream os;
      os << "kernel row " << i << " sums to " << s << ", expected 1 within 1e-9";
      throw ValidationError(os.str());
    }
    out.kernel.row(i) /= s;
  }

  if (n == 1) {
    out.pi = Eigen::VectorXd::Ones(1);
    out.rho = 0.0;
    out.c_rho = 1.0;
    return out;
  }

  Eigen::EigenSolver<Eigen::MatrixXd> es(out.kernel, false);
  if (es.info() != Eigen::Success) {
    throw Error("eigenvalue iteration failed on the kernel");
  }
  std::vector<double> moduli(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    moduli[static_cast<std::size_t>(i)] = std::abs(es.eigenvalues()(i));
  }
  std::sort(moduli.begin(), moduli.end(), std::greater<>());
  if (moduli[1] >= 1.0 - 1e-10) {
    throw ErgodicityError(
        "kernel is reducible or periodic (repeated eigenvalue modulus 1)");
  }
  out.rho = std::clamp(moduli[1], 0.0, 1.0 - 1e-12);
  if (out.rho < 1e-14) out.rho = 0.0;

  out.pi = stationary_distribution(out.kernel);
  if ((out.pi.array() <= 0.0).any()) {
    throw ErgodicityError("stationary distribution has a nonpositive entry");
  }

  // Smallest prefactor making ||P^t d - pi||_1 <= c rho^t hold for every
  // point mass d up to four times the 1e-6 decay horizon.
  out.c_rho = 1.0;
  if (out.rho > 0.0) {
    const long tau_star = static_cast<long>(
        std::ceil(std::log(1e-6) / std::log(out.rho)));
    const long horizon = std::min(kMaxFitHorizon, 4 * std::max<long>(1, tau_star));
    Eigen::MatrixXd pt = out.kernel;
    double rho_pow = out.rho;
    const Eigen::RowVectorXd pi_row = out.pi.transpose();
    for (long t = 1; t <= horizon; ++t) {
      double worst = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        worst = std::max(worst, (pt.row(i) - pi_row).cwiseAbs().sum());
      }
      if (worst >= kFitFloor) {
        out.c_rho = std::max(out.c_rho, worst / rho_pow);
      } else {
        break;
      }
      pt *= out.kernel;
      rho_pow *= out.rho;
    }
  }
  return out;
}

MarkovChain random_chain(int n, std::uint64_t seed, double min_entry) {
  if (n <= 0) throw DimensionError("chain needs at least one state");
  if (!(min_entry > 0.0) || min_entry * n >= 1.0) {
    std::ostringstream os;
    os << "min_entry must satisfy 0 < min_entry and n * min_entry < 1, got "
       << min_entry << " with n = " << n;
    throw ValidationError(os.str());
  }
  rng::Stream stream(rng::split(seed, 0));
  Eigen::MatrixXd kernel(n, n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd u(n);
    for (int j = 0; j < n; ++j) u(j) = stream.next_double();
    double s = u.sum();
    if (s <= 0.0) {
      u.setOnes();
      s = static_cast<double>(n);
    }
    // Affine mix keeps every entry at least min_entry with the row summing
    // to one, which is what guarantees irreducibility and aperiodicity.
    kernel.row(i) = (min_entry + (1.0 - n * min_entry) * (u.array() / s)).transpose();
  }
  return build_chain(kernel);
}

MixingTime mixing_time(const MarkovChain& chain, double alpha, double mu_x) {
  if (!(alpha > 0.0) || !(mu_x > 0.0)) {
    throw ValidationError("mixing_time needs alpha > 0 and mu_x > 0");
  }
  const double threshold = alpha * mu_x;
  if (chain.rho <= 0.0) return MixingTime{1, false};
  if (threshold >= chain.c_rho) return MixingTime{1, true};
  const double t = std::ceil(std::log(threshold / chain.c_rho) /
                             std::log(chain.rho));
  return MixingTime{std::max<long>(1, static_cast<long>(t)), false};
}

ChainSampler::ChainSampler(const MarkovChain& chain, rng::Stream stream,
                           int initial_state)
    : stream_(stream), state_(initial_state) {
  const int n = chain.n();
  if (initial_state < 0 || initial_state >= n) {
    throw ValidationError("initial state out of range");
  }
  cum_rows_.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& row = cum_rows_[static_cast<std::size_t>(i)];
    row.resize(static_cast<std::size_t>(n));
    double acc = 0.0;
    for (int j = 0; j < n; ++j) {
      acc += chain.kernel(i, j);
      row[static_cast<std::size_t>(j)] = acc;
    }
    row[static_cast<std::size_t>(n - 1)] = 1.0;
  }
}

ChainSampler ChainSampler::from_stationary(const MarkovChain& chain,
                                           rng::Stream stream) {
  std::vector<double> cum(static_cast<std::size_t>(chain.n()));
  double acc = 0.0;
  for (int i = 0; i < chain.n(); ++i) {
    acc += chain.pi(i);
    cum[static_cast<std::size_t>(i)] = acc;
  }
  cum.back() = 1.0;
  const int initial = stream.next_categorical(cum);
  return ChainSampler(chain, stream, initial);
}

int ChainSampler::step() {
  const auto& row = cum_rows_[static_cast<std::size_t>(state_)];
  const double u = stream_.next_double();
  const int n = static_cast<int>(row.size());
  int next = n - 1;
  for (int j = 0; j < n; ++j) {
    if (u < row[static_cast<std::size_t>(j)]) {
      next = j;
      break;
    }
  }
  state_ = next;
  return state_;
}

void save_kernel_csv(const Eigen::MatrixXd& kernel, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path);
  for (Eigen::Index i = 0; i < kernel.rows(); ++i) {
    for (Eigen::Index j = 0; j < kernel.cols(); ++j) {
      if (j) out << ',';
      out << io::format_double(kernel(i, j));
    }
    out << '\n';
  }
}

Eigen::MatrixXd load_kernel_csv(const std::string& path) {
  const auto rows = io::read_csv_file(path);
  if (rows.empty()) throw ParseError("kernel CSV is empty: " + path);
  const std::size_t n = rows.size();
  Eigen::MatrixXd kernel(static_cast<Eigen::Index>(n),
                         static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < n; ++i) {
    if (rows[i].size() != rows[0].size()) {
      std::ostringstream os;
      os << "kernel CSV row " << i + 1 << " has " << rows[i].size()
         << " fields, expected " << rows[0].size();
      throw ParseError(os.str());
    }
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      kernel(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          io::parse_double(rows[i][j], i, j);
    }
  }
  return kernel;
}

}  // namespace ttsa::chain
