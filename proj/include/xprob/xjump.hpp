#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <optional>
#include <stdexcept>
#include <vector>

#include "xprob/propagator.hpp"

namespace xprob {

enum class JumpMechanism { ShellHaar, ShellPhaseScramble };

inline JumpMechanism mechanism_from_string(const std::string& s) {
  if (s == "shell-haar") return JumpMechanism::ShellHaar;
  if (s == "shell-phase-scramble") return JumpMechanism::ShellPhaseScramble;
  throw std::invalid_argument("unknown mechanism: " + s);
}

inline std::string to_string(JumpMechanism m) {
  return m == JumpMechanism::ShellHaar ? "shell-haar" : "shell-phase-scramble";
}

/// Configuration of the stochastic energy-conserving jump channel.
/// The shell half-width is either an absolute energy or a fraction of the
/// spectral range, resolved against a concrete EigenSystem.
struct XJumpConfig {
  double per_particle_rate = 0.0;          // lambda_1, events / time / particle
  double shell_half_width = 0.0;           // absolute, used when fraction < 0
  double shell_spectral_fraction = 0.05;   // default: 5% of spectral range
  bool width_is_fraction = true;
  JumpMechanism mechanism = JumpMechanism::ShellHaar;
  std::optional<double> rate_coupling;     // g, links rate to |Hint|

  void validate() const {
    if (per_particle_rate < 0)
      throw std::invalid_argument("per_particle_rate must be >= 0");
    if (width_is_fraction) {
      if (shell_spectral_fraction <= 0)
        throw std::invalid_argument("shell spectral fraction must be > 0");
    } else if (shell_half_width <= 0) {
      throw std::invalid_argument("shell_half_width must be > 0");
    }
  }
};

inline double resolved_shell_half_width(const XJumpConfig& cfg,
                                        const EigenSystem& eig) {
  return cfg.width_is_fraction ? cfg.shell_spectral_fraction * eig.spectral_range()
                               : cfg.shell_half_width;
}

struct JumpSchedule {
  std::vector<double> times;  // ascending, within [0, T]
  std::uint64_t seed = 0;
};

inline double aggregate_rate(double n_particles, double per_particle_rate) {
  if (n_particles < 0 || per_particle_rate < 0)
    throw std::invalid_argument("aggregate_rate: arguments must be >= 0");
  return n_particles * per_particle_rate;
}

inline double expected_states_visited(double rate, double duration) {
  if (rate < 0 || duration < 0)
    throw std::invalid_argument("expected_states_visited: arguments must be >= 0");
  return rate * duration;
}

/// Homogeneous Poisson process on [0, duration].
inline JumpSchedule sample_schedule(double rate, double duration,
                                    std::uint64_t seed) {
  if (rate < 0) throw std::invalid_argument("sample_schedule: rate must be >= 0");
  JumpSchedule sched;
  sched.seed = seed;
  if (rate == 0 || duration <= 0) return sched;
  auto rng = make_rng(seed);
  std::exponential_distribution<double> gap(rate);
  double t = gap(rng);
  while (t < duration) {
    sched.times.push_back(t);
    t += gap(rng);
  }
  return sched;
}

/// Eigenstate indices within |E_m - <E>| <= half_width of the state's
/// current energy expectation.
inline std::vector<Eigen::Index> shell_indices(const StateVector& state,
                                               const EigenSystem& eig,
                                               double half_width) {
  const double e = energy_expectation(state, eig);
  std::vector<Eigen::Index> shell;
  for (Eigen::Index m = 0; m < eig.dim(); ++m)
    if (std::abs(eig.energies(m) - e) <= half_width) shell.push_back(m);
  return shell;
}

/// Haar-distributed k x k unitary: QR of a complex Ginibre matrix with the
/// R-diagonal phases absorbed into Q.
inline Matrix haar_unitary(Eigen::Index k, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix A(k, k);
  for (Eigen::Index r = 0; r < k; ++r)
    for (Eigen::Index c = 0; c < k; ++c) A(r, c) = Complex(gauss(rng), gauss(rng));
  Eigen::HouseholderQR<Matrix> qr(A);
  Matrix Q = qr.householderQ();
  Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < k; ++c) {
    const Complex d = R(c, c);
    const double ad = std::abs(d);
    Q.col(c) *= (ad > 0 ? d / ad : Complex(1, 0));
  }
  return Q;
}

struct JumpResult {
  StateVector state;
  bool degenerate_shell = false;  // |S| == 1: modulus-preserving no-op
  std::vector<Eigen::Index> shell;
};

/// One energy-conserving random jump. Amplitudes outside the shell are
/// untouched; the shell weight sum |a_m|^2 is preserved exactly.
inline JumpResult apply_jump(const StateVector& state, const EigenSystem& eig,
                             const XJumpConfig& cfg, std::uint64_t seed) {
  const double hw = resolved_shell_half_width(cfg, eig);
  JumpResult out;
  out.shell = shell_indices(state, eig, hw);
  out.state = state;
  const Eigen::Index k = (Eigen::Index)out.shell.size();
  if (k == 0)
    throw std::logic_error("apply_jump: empty shell");  // cannot happen for hw > 0
  if (k == 1) out.degenerate_shell = true;

  StateVector sub(k);
  for (Eigen::Index s = 0; s < k; ++s) sub(s) = state(out.shell[s]);

  StateVector sub_new(k);
  if (cfg.mechanism == JumpMechanism::ShellHaar) {
    sub_new = haar_unitary(k, seed) * sub;
  } else {
    const double weight = sub.squaredNorm();
    auto rng = make_rng(seed);
    std::exponential_distribution<double> expo(1.0);
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
    Eigen::VectorXd draws(k);
    for (Eigen::Index s = 0; s < k; ++s) draws(s) = expo(rng);
    draws *= weight / draws.sum();  // uniform on the shell simplex
    for (Eigen::Index s = 0; s < k; ++s) {
      const double phi = angle(rng);
      sub_new(s) = std::sqrt(draws(s)) * Complex(std::cos(phi), std::sin(phi));
    }
  }
  for (Eigen::Index s = 0; s < k; ++s) out.state(out.shell[s]) = sub_new(s);
  return out;
}

/// Piecewise trajectory: unitary evolution between Poisson-scheduled jump
/// events. Pure function of (inputs, seed); usable incrementally so
/// experiments can sample the state at intermediate times.
class JumpTrajectory {
 public:
  JumpTrajectory(const EigenSystem& eig, StateVector initial,
                 const XJumpConfig& cfg, double n_particles, double duration,
                 std::uint64_t seed)
      : eig_(&eig), state_(std::move(initial)), cfg_(cfg), seed_(seed) {
    cfg_.validate();
    const double rate = aggregate_rate(n_particles, cfg.per_particle_rate);
    schedule_ = sample_schedule(rate, duration, derive_seed(seed, 0));
  }

  /// Advance to absolute time t (monotone across calls).
  void advance_to(double t) {
    if (t < time_) throw std::invalid_argument("advance_to: time must not decrease");
    while (next_event_ < schedule_.times.size() &&
           schedule_.times[next_event_] <= t) {
      const double te = schedule_.times[next_event_];
      state_ = evolve(state_, *eig_, te - time_);
      state_ = apply_jump(state_, *eig_, cfg_, derive_seed(seed_, 1 + next_event_))
                   .state;
      time_ = te;
      ++next_event_;
    }
    state_ = evolve(state_, *eig_, t - time_);
    time_ = t;
  }

  const StateVector& state() const { return state_; }
  double time() const { return time_; }
  std::size_t jumps_so_far() const { return next_event_; }
  const JumpSchedule& schedule() const { return schedule_; }

 private:
  const EigenSystem* eig_;
  StateVector state_;
  XJumpConfig cfg_;
  std::uint64_t seed_;
  JumpSchedule schedule_;
  double time_ = 0.0;
  std::size_t next_event_ = 0;
};

struct JumpEvolveResult {
  StateVector state;
  JumpSchedule schedule;
};

/// Jump-augmented evolution over [0, t]; reduces to evolve() when the
/// aggregate rate is zero.
inline JumpEvolveResult evolve_with_jumps(const StateVector& state,
                                          const EigenSystem& eig, double t,
                                          const XJumpConfig& cfg,
                                          double n_particles,
                                          std::uint64_t seed) {
  JumpTrajectory traj(eig, state, cfg, n_particles, t, seed);
  traj.advance_to(t);
  return JumpEvolveResult{traj.state(), traj.schedule()};
}

/// Rate model tying jump frequency to interaction strength: g * |Hint|.
inline double rate_from_interaction(const Matrix& hint, const XJumpConfig& cfg) {
  if (!cfg.rate_coupling)
    throw std::invalid_argument("rate_from_interaction: rate_coupling not set");
  return *cfg.rate_coupling * spectral_norm(hint);
}

/// Seeded random state supported on the eigenstates within
/// |E_m - center| <= half_width.
inline StateVector random_shell_state(const EigenSystem& eig, double center,
                                      double half_width, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  StateVector v = StateVector::Zero(eig.dim());
  bool any = false;
  for (Eigen::Index m = 0; m < eig.dim(); ++m) {
    if (std::abs(eig.energies(m) - center) <= half_width) {
      v(m) = Complex(gauss(rng), gauss(rng));
      any = true;
    }
  }
  if (!any) throw std::invalid_argument("random_shell_state: empty shell");
  v.normalize();
  return v;
}

}  // namespace xprob
