#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "xprob/ensembles.hpp"
#include "xprob/xjump.hpp"

namespace xprob {

struct TimeSeries {
  Eigen::VectorXd times;
  Eigen::VectorXd values;
  std::string label;

  void validate() const {
    if (times.size() != values.size())
      throw std::invalid_argument("TimeSeries: length mismatch");
    for (Eigen::Index i = 1; i < times.size(); ++i)
      if (!(times(i) > times(i - 1)))
        throw std::invalid_argument("TimeSeries: times must ascend");
  }
};

inline Matrix sz_site(int n, int site) {
  return embed_one_site(n, site, pauli::z());
}
inline Matrix sx_site(int n, int site) {
  return embed_one_site(n, site, pauli::x());
}
inline Matrix collective_sz(int n) {
  const Eigen::Index dim = Eigen::Index(1) << n;
  Matrix out = Matrix::Zero(dim, dim);
  for (Eigen::Index b = 0; b < dim; ++b) {
    double m = 0;
    for (int i = 0; i < n; ++i) m += ((b >> i) & 1) ? -1.0 : 1.0;
    out(b, b) = m;
  }
  return out;
}

inline double default_burn_in(const XJumpConfig& cfg, double n_particles) {
  const double rate = aggregate_rate(n_particles, cfg.per_particle_rate);
  return rate > 0 ? 10.0 / rate : 0.0;
}

// ---------------------------------------------------------------------------
// Time-reversal echo

struct EchoResult {
  double forward_time = 0.0;
  double fidelity = 0.0;             // |<initial|final>|^2
  double observable_recovery = std::numeric_limits<double>::quiet_NaN();
  long n_jumps = 0;
  std::uint64_t seed = 0;
};

/// Forward evolution for time T, imperfect sign reversal of H, backward leg
/// of the same duration. Jumps stay active on both legs when the rate is
/// nonzero. Recovery is reported for the collective sigma_z magnetization.
inline EchoResult echo_experiment(const Hamiltonian& ham, const EigenSystem& eig,
                                  const StateVector& initial, double T,
                                  double reversal_epsilon,
                                  const XJumpConfig& cfg, double n_particles,
                                  std::uint64_t seed) {
  if (!(T > 0)) throw std::invalid_argument("echo_experiment: T must be > 0");
  auto forward = evolve_with_jumps(initial, eig, T, cfg, n_particles,
                                   derive_seed(seed, 11));
  const Matrix h_rev =
      perturb_reversal(ham.total, reversal_epsilon, derive_seed(seed, 12));
  const EigenSystem eig_rev = eigendecompose(h_rev);

  const StateVector psi_mid = eig.basis * forward.state;
  const StateVector a_rev = eig_rev.basis.adjoint() * psi_mid;
  auto backward = evolve_with_jumps(a_rev, eig_rev, T, cfg, n_particles,
                                    derive_seed(seed, 13));
  const StateVector psi_final = eig_rev.basis * backward.state;
  const StateVector psi0 = eig.basis * initial;

  EchoResult res;
  res.forward_time = T;
  res.seed = seed;
  res.fidelity = std::norm(psi0.dot(psi_final));
  res.n_jumps =
      (long)(forward.schedule.times.size() + backward.schedule.times.size());

  const int n = (int)std::llround(std::log2((double)eig.dim()));
  auto magnetization = [&](const StateVector& psi) {
    double m = 0;
    for (Eigen::Index b = 0; b < psi.size(); ++b) {
      double mz = 0;
      for (int i = 0; i < n; ++i) mz += ((b >> i) & 1) ? -1.0 : 1.0;
      m += std::norm(psi(b)) * mz;
    }
    return m;
  };
  const double m0 = magnetization(psi0);
  if (std::abs(m0) > 1e-12) res.observable_recovery = magnetization(psi_final) / m0;
  return res;
}

inline EchoResult echo_experiment(const SpinSystem& sys,
                                  const StateVector& initial, double T,
                                  double reversal_epsilon,
                                  const XJumpConfig& cfg, std::uint64_t seed) {
  const Hamiltonian ham = build_hamiltonian(sys);
  const EigenSystem eig = eigendecompose(ham.total);
  return echo_experiment(ham, eig, initial, T, reversal_epsilon, cfg,
                         (double)sys.n_spins, seed);
}

// ---------------------------------------------------------------------------
// Equilibration toward the microcanonical shell

struct EquilibrationResult {
  TimeSeries divergence;  // running TV distance of time-averaged shell
                          // occupations from uniform-on-shell
  Eigen::VectorXd final_occupations;
  Eigen::VectorXd time_avg_shell_occupations;  // normalized over the shell
  std::vector<Eigen::Index> shell;             // reference shell of the initial state
  double max_occupation_drift = 0.0;           // vs initial occupations
  double shell_weight_drift = 0.0;             // vs initial shell weight
  std::size_t n_jumps = 0;
};

inline EquilibrationResult equilibration_experiment(
    const EigenSystem& eig, const StateVector& initial, double T_total,
    int n_samples, const XJumpConfig& cfg, double n_particles,
    std::uint64_t seed) {
  if (n_samples < 2)
    throw std::invalid_argument("equilibration_experiment: n_samples >= 2");
  const double hw = resolved_shell_half_width(cfg, eig);
  EquilibrationResult res;
  res.shell = shell_indices(initial, eig, hw);
  const Eigen::VectorXd occ0 = occupations(initial);
  auto shell_weight = [&](const Eigen::VectorXd& occ) {
    double w = 0;
    for (auto m : res.shell) w += occ(m);
    return w;
  };
  const double w0 = shell_weight(occ0);

  JumpTrajectory traj(eig, initial, cfg, n_particles, T_total, seed);
  Eigen::VectorXd occ_sum = Eigen::VectorXd::Zero(eig.dim());
  res.divergence.times.resize(n_samples);
  res.divergence.values.resize(n_samples);
  res.divergence.label = "tv_to_uniform_on_shell";
  const double uniform = 1.0 / (double)res.shell.size();
  Eigen::VectorXd occ;
  for (int k = 0; k < n_samples; ++k) {
    const double t = T_total * (double)k / (double)(n_samples - 1);
    traj.advance_to(t);
    occ = occupations(traj.state());
    occ_sum += occ;
    const Eigen::VectorXd avg = occ_sum / (double)(k + 1);
    const double w = shell_weight(avg);
    double tv = 0;
    for (auto m : res.shell) tv += std::abs(avg(m) / w - uniform);
    res.divergence.times(k) = t;
    res.divergence.values(k) = 0.5 * tv;
    res.max_occupation_drift =
        std::max(res.max_occupation_drift, (occ - occ0).cwiseAbs().maxCoeff());
    res.shell_weight_drift =
        std::max(res.shell_weight_drift, std::abs(shell_weight(occ) - w0));
  }
  res.final_occupations = occ;
  const double w = shell_weight(occ_sum);
  res.time_avg_shell_occupations.resize((Eigen::Index)res.shell.size());
  for (Eigen::Index s = 0; s < (Eigen::Index)res.shell.size(); ++s)
    res.time_avg_shell_occupations(s) = occ_sum(res.shell[(size_t)s]) / w;
  res.n_jumps = traj.jumps_so_far();
  return res;
}

// ---------------------------------------------------------------------------
// Boltzmann marginal check for a non-interacting system

struct BoltzmannCheckResult {
  double mean_tv = 0.0;          // seed-averaged TV distance
  double beta = 0.0;             // solved from the level spec and E_target
  Eigen::Vector2d target;        // W = (W_lower, W_upper) per Eq.-(7) form
  Eigen::Vector2d measured_mean; // seed-averaged measured marginal
  bool hint_warning = false;     // interaction not negligible
};

/// Builds an initial state with the requested energy expectation out of the
/// two eigenvalue clusters bracketing it.
inline StateVector bracketed_energy_state(const EigenSystem& eig,
                                          double e_target, std::uint64_t seed) {
  const double tol = 1e-9 * std::max(1.0, eig.spectral_range());
  // cluster degenerate eigenvalues
  std::vector<std::pair<double, std::vector<Eigen::Index>>> clusters;
  for (Eigen::Index m = 0; m < eig.dim(); ++m) {
    if (clusters.empty() || eig.energies(m) > clusters.back().first + tol)
      clusters.push_back({eig.energies(m), {m}});
    else
      clusters.back().second.push_back(m);
  }
  if (!(e_target >= clusters.front().first - tol &&
        e_target <= clusters.back().first + tol))
    throw std::invalid_argument("bracketed_energy_state: E_target out of range");

  std::size_t hi = 0;
  while (hi < clusters.size() && clusters[hi].first < e_target - tol) ++hi;
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  StateVector v = StateVector::Zero(eig.dim());
  auto fill = [&](const std::vector<Eigen::Index>& members, double weight) {
    if (weight <= 0) return;
    StateVector sub(members.size());
    for (Eigen::Index s = 0; s < sub.size(); ++s)
      sub(s) = Complex(gauss(rng), gauss(rng));
    sub *= std::sqrt(weight) / sub.norm();
    for (Eigen::Index s = 0; s < sub.size(); ++s) v(members[(size_t)s]) = sub(s);
  };
  if (std::abs(clusters[hi].first - e_target) <= tol) {
    fill(clusters[hi].second, 1.0);
  } else {
    const auto& lo = clusters[hi - 1];
    const auto& up = clusters[hi];
    const double w_up = (e_target - lo.first) / (up.first - lo.first);
    fill(lo.second, 1.0 - w_up);
    fill(up.second, w_up);
  }
  return v;
}

/// Drives a (nearly) non-interacting system of identical spins with the jump
/// channel and compares the time-averaged per-spin level occupation against
/// the canonical single-particle distribution at the solved beta.
/// E_target is the absolute energy expectation of the full system.
inline BoltzmannCheckResult boltzmann_check(const SpinSystem& sys,
                                            const XJumpConfig& cfg,
                                            double e_target, double T_total,
                                            std::span<const std::uint64_t> seeds,
                                            int n_samples = 400) {
  sys.validate();
  if (seeds.empty()) throw std::invalid_argument("boltzmann_check: no seeds");
  const Hamiltonian ham = build_hamiltonian(sys);
  const EigenSystem eig = eigendecompose(ham.total);

  BoltzmannCheckResult res;
  const double zeeman_scale = spectral_norm(ham.zeeman);
  if (sys.couplings.size() &&
      spectral_norm(ham.interaction) > 1e-6 * zeeman_scale)
    res.hint_warning = true;

  const double omega = sys.zeeman_frequencies[0];
  for (double w : sys.zeeman_frequencies)
    if (std::abs(w - omega) > 1e-9 * std::max(1.0, std::abs(omega)))
      throw std::invalid_argument("boltzmann_check: identical spins required");

  LevelSpec levels;
  levels.energies.resize(2);
  levels.energies << -0.5 * std::abs(omega), 0.5 * std::abs(omega);
  res.beta = solve_beta(levels, sys.n_spins, e_target);
  const Eigen::VectorXd w_target = particle_level_probability(levels, res.beta);
  res.target << w_target(0), w_target(1);

  const double burn_in = default_burn_in(cfg, (double)sys.n_spins);
  if (!(T_total > burn_in))
    throw std::invalid_argument("boltzmann_check: T_total must exceed burn-in");

  // upper single-particle level <-> sigma_z = sign(omega)
  const int upper_bit = omega >= 0 ? 0 : 1;
  double tv_sum = 0;
  Eigen::Vector2d measured_sum = Eigen::Vector2d::Zero();
  for (std::uint64_t seed : seeds) {
    const StateVector initial =
        bracketed_energy_state(eig, e_target, derive_seed(seed, 21));
    JumpTrajectory traj(eig, initial, cfg, (double)sys.n_spins, T_total,
                        derive_seed(seed, 22));
    double p_upper_sum = 0;
    for (int k = 0; k < n_samples; ++k) {
      const double t =
          burn_in + (T_total - burn_in) * (double)k / (double)(n_samples - 1);
      traj.advance_to(t);
      const StateVector psi = eig.basis * traj.state();
      double p_upper = 0;
      for (Eigen::Index b = 0; b < psi.size(); ++b) {
        const double pb = std::norm(psi(b));
        if (pb == 0) continue;
        int n_up = 0;
        for (int i = 0; i < sys.n_spins; ++i)
          if (((b >> i) & 1) == upper_bit) ++n_up;
        p_upper += pb * (double)n_up / (double)sys.n_spins;
      }
      p_upper_sum += p_upper;
    }
    const double p_upper = p_upper_sum / (double)n_samples;
    measured_sum += Eigen::Vector2d(1.0 - p_upper, p_upper);
    tv_sum += std::abs(p_upper - res.target(1));
  }
  res.mean_tv = tv_sum / (double)seeds.size();
  res.measured_mean = measured_sum / (double)seeds.size();
  return res;
}

// ---------------------------------------------------------------------------
// Temporal correlation estimator

struct CorrelationParams {
  Eigen::VectorXd t_grid;          // ascending lags, first may be 0
  double trajectory_time = 0.0;
  double sample_dt = 0.0;          // 0: derived from the grid
  double burn_in = -1.0;           // <0: 10 mean inter-jump intervals
  int min_pairs = 30;
};

/// R(f, g | T) estimated along one jump-augmented trajectory by time
/// averaging, with per-window mean subtraction so a constant observable
/// gives exactly zero.
inline TimeSeries correlation_experiment(const EigenSystem& eig,
                                         const StateVector& initial,
                                         const Matrix& f, const Matrix& g,
                                         const XJumpConfig& cfg,
                                         double n_particles,
                                         const CorrelationParams& params,
                                         std::uint64_t seed) {
  if (params.t_grid.size() == 0)
    throw std::invalid_argument("correlation_experiment: empty T grid");
  for (Eigen::Index i = 1; i < params.t_grid.size(); ++i)
    if (!(params.t_grid(i) > params.t_grid(i - 1)))
      throw std::invalid_argument("correlation_experiment: T grid must ascend");

  double dt = params.sample_dt;
  if (dt <= 0) {
    dt = std::numeric_limits<double>::infinity();
    double prev = 0.0;
    for (Eigen::Index i = 0; i < params.t_grid.size(); ++i) {
      const double gap = params.t_grid(i) - prev;
      if (gap > 0) dt = std::min(dt, gap);
      prev = params.t_grid(i);
    }
    if (!std::isfinite(dt)) dt = params.trajectory_time / 256.0;
  }
  const double burn_in = params.burn_in >= 0
                             ? params.burn_in
                             : default_burn_in(cfg, n_particles);
  std::vector<Eigen::Index> lags(params.t_grid.size());
  for (Eigen::Index i = 0; i < params.t_grid.size(); ++i) {
    lags[(size_t)i] = (Eigen::Index)std::llround(params.t_grid(i) / dt);
    if (std::abs((double)lags[(size_t)i] * dt - params.t_grid(i)) >
        1e-9 * std::max(1.0, params.t_grid(i)))
      throw std::invalid_argument(
          "correlation_experiment: T grid not commensurate with sample_dt");
  }
  const Eigen::Index n_steps =
      (Eigen::Index)std::floor((params.trajectory_time - burn_in) / dt);
  const Eigen::Index max_lag = lags.back();
  if (n_steps + 1 - max_lag < params.min_pairs)
    throw std::runtime_error(
        "correlation_experiment: trajectory too short for the largest lag");

  JumpTrajectory traj(eig, initial, cfg, n_particles, params.trajectory_time,
                      seed);
  Eigen::VectorXd fs(n_steps + 1), gs(n_steps + 1);
  for (Eigen::Index k = 0; k <= n_steps; ++k) {
    traj.advance_to(burn_in + (double)k * dt);
    fs(k) = observable_expectation(traj.state(), eig, f);
    gs(k) = observable_expectation(traj.state(), eig, g);
  }

  TimeSeries out;
  out.label = "correlation";
  out.times = params.t_grid;
  out.values.resize(params.t_grid.size());
  for (Eigen::Index j = 0; j < params.t_grid.size(); ++j) {
    const Eigen::Index lag = lags[(size_t)j];
    const Eigen::Index n_pairs = n_steps + 1 - lag;
    const double mean_f = fs.segment(lag, n_pairs).mean();
    const double mean_g = gs.segment(0, n_pairs).mean();
    double acc = 0;
    for (Eigen::Index k = 0; k < n_pairs; ++k)
      acc += (fs(k + lag) - mean_f) * (gs(k) - mean_g);
    out.values(j) = acc / (double)n_pairs;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ergodicity diagnostic

struct ErgodicityResult {
  double time_average = 0.0;
  double ensemble_average = 0.0;  // shell-uniform eigenstate average
  double gap = 0.0;
};

inline ErgodicityResult ergodicity_check(const EigenSystem& eig,
                                         const StateVector& initial,
                                         const Matrix& A, const XJumpConfig& cfg,
                                         double n_particles,
                                         double trajectory_time,
                                         std::uint64_t seed,
                                         int n_samples = 400) {
  const double hw = resolved_shell_half_width(cfg, eig);
  const auto shell = shell_indices(initial, eig, hw);
  double ens = 0;
  for (auto m : shell) {
    const Eigen::VectorXcd col = eig.basis.col(m);
    ens += std::real(col.dot(A * col));
  }
  ens /= (double)shell.size();

  const double burn_in = default_burn_in(cfg, n_particles);
  if (!(trajectory_time > burn_in))
    throw std::invalid_argument("ergodicity_check: trajectory shorter than burn-in");
  JumpTrajectory traj(eig, initial, cfg, n_particles, trajectory_time, seed);
  double acc = 0;
  for (int k = 0; k < n_samples; ++k) {
    const double t = burn_in + (trajectory_time - burn_in) * (double)k /
                                   (double)(n_samples - 1);
    traj.advance_to(t);
    acc += observable_expectation(traj.state(), eig, A);
  }
  ErgodicityResult res;
  res.time_average = acc / (double)n_samples;
  res.ensemble_average = ens;
  res.gap = std::abs(res.time_average - res.ensemble_average);
  return res;
}

}  // namespace xprob
