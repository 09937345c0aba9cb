#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace xprob {

/// Single-particle energy levels eps_i, strictly ascending, with optional
/// integer degeneracies (default 1 each).
struct LevelSpec {
  Eigen::VectorXd energies;
  Eigen::VectorXi degeneracies;  // empty means all 1

  Eigen::Index count() const { return energies.size(); }
  double degeneracy(Eigen::Index i) const {
    return degeneracies.size() ? (double)degeneracies(i) : 1.0;
  }

  void validate() const {
    if (energies.size() < 2)
      throw std::invalid_argument("LevelSpec: need at least 2 levels");
    for (Eigen::Index i = 1; i < energies.size(); ++i)
      if (!(energies(i) > energies(i - 1)))
        throw std::invalid_argument("LevelSpec: energies must be strictly ascending");
    if (degeneracies.size() && degeneracies.size() != energies.size())
      throw std::invalid_argument("LevelSpec: degeneracies size mismatch");
    for (Eigen::Index i = 0; i < degeneracies.size(); ++i)
      if (degeneracies(i) < 1)
        throw std::invalid_argument("LevelSpec: degeneracies must be >= 1");
  }
};

/// Occupation numbers n_i aligned with a LevelSpec.
struct OccupancyProfile {
  Eigen::VectorXd occupations;
};

struct ThermoState {
  double beta = 0.0;
  double z1 = 0.0;           // single-particle partition value
  double log_z = 0.0;        // system log-partition, ln(Z1^N / N!)
  double free_energy = std::numeric_limits<double>::quiet_NaN();
  bool free_energy_defined = false;  // false at beta = 0
  double internal_energy = 0.0;
};

/// ln n! — exact table up to 20!, log-gamma beyond.
inline double log_factorial(double n) {
  static const double exact[21] = {
      0.0,
      0.0,
      std::log(2.0),
      std::log(6.0),
      std::log(24.0),
      std::log(120.0),
      std::log(720.0),
      std::log(5040.0),
      std::log(40320.0),
      std::log(362880.0),
      std::log(3628800.0),
      std::log(39916800.0),
      std::log(479001600.0),
      std::log(6227020800.0),
      std::log(87178291200.0),
      std::log(1307674368000.0),
      std::log(20922789888000.0),
      std::log(355687428096000.0),
      std::log(6402373705728000.0),
      std::log(121645100408832000.0),
      std::log(2432902008176640000.0)};
  const long k = std::lround(n);
  if (std::abs(n - (double)k) > 1e-9 || k < 0)
    throw std::invalid_argument("log_factorial: non-negative integer required");
  if (k <= 20) return exact[k];
  return std::lgamma((double)k + 1.0);
}

/// ln P = ln N! - sum_i ln n_i! for an integer occupancy profile.
inline double log_multiplicity(const OccupancyProfile& profile, long n_total) {
  double sum = 0.0, acc = 0.0;
  for (Eigen::Index i = 0; i < profile.occupations.size(); ++i) {
    const double ni = profile.occupations(i);
    if (ni < -1e-9 || std::abs(ni - std::lround(ni)) > 1e-9)
      throw std::invalid_argument(
          "log_multiplicity: occupations must be non-negative integers");
    sum += ni;
    acc += log_factorial(ni);
  }
  if (std::abs(sum - (double)n_total) > 1e-9)
    throw std::invalid_argument("log_multiplicity: occupations must sum to N");
  return log_factorial((double)n_total) - acc;
}

/// Degeneracy-weighted Boltzmann factors, max-shifted against overflow.
inline Eigen::VectorXd boltzmann_weights(const LevelSpec& levels, double beta) {
  const Eigen::Index k = levels.count();
  const double shift = beta >= 0 ? beta * levels.energies.minCoeff()
                                 : beta * levels.energies.maxCoeff();
  Eigen::VectorXd w(k);
  for (Eigen::Index i = 0; i < k; ++i)
    w(i) = levels.degeneracy(i) * std::exp(-(beta * levels.energies(i) - shift));
  return w;
}

/// Lagrange-optimal occupations n_i = N e^{-beta eps_i} / sum_j e^{-beta eps_j}.
inline OccupancyProfile boltzmann_profile(const LevelSpec& levels, long n_total,
                                          double beta) {
  levels.validate();
  if (n_total < 1) throw std::invalid_argument("boltzmann_profile: N >= 1 required");
  Eigen::VectorXd w = boltzmann_weights(levels, beta);
  return OccupancyProfile{(double)n_total * w / w.sum()};
}

/// W_i = e^{-beta eps_i} / Z1, the single-particle level distribution.
inline Eigen::VectorXd particle_level_probability(const LevelSpec& levels,
                                                  double beta) {
  levels.validate();
  Eigen::VectorXd w = boltzmann_weights(levels, beta);
  return w / w.sum();
}

inline double mean_energy_at_beta(const LevelSpec& levels, long n_total,
                                  double beta) {
  Eigen::VectorXd w = boltzmann_weights(levels, beta);
  return (double)n_total * levels.energies.dot(w) / w.sum();
}

/// Inverse temperature matching a target total energy, by bisection on the
/// strictly decreasing E(beta). Negative beta (population inversion) allowed.
inline double solve_beta(const LevelSpec& levels, long n_total, double e_target) {
  levels.validate();
  const double e_min = (double)n_total * levels.energies.minCoeff();
  const double e_max = (double)n_total * levels.energies.maxCoeff();
  if (!(e_target > e_min && e_target < e_max))
    throw std::invalid_argument(
        "solve_beta: E_target must lie strictly between N*eps_min and N*eps_max");
  double lo = -1.0, hi = 1.0;  // E(lo) > target > E(hi) once bracketed
  while (mean_energy_at_beta(levels, n_total, hi) > e_target) hi *= 2.0;
  while (mean_energy_at_beta(levels, n_total, lo) < e_target) lo *= 2.0;
  for (int iter = 0; iter < 200; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mean_energy_at_beta(levels, n_total, mid) > e_target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-15 * std::max(1.0, std::abs(lo) + std::abs(hi))) break;
  }
  return 0.5 * (lo + hi);
}

/// Canonical probability e^{-beta E_m} / Z of one system state.
inline double system_state_probability(double e_state, double beta,
                                       double log_z) {
  return std::exp(-beta * e_state - log_z);
}

/// Z1, ln Z = N ln Z1 - ln N!, free and internal energy at given beta.
inline ThermoState partition_values(const LevelSpec& levels, long n_total,
                                    double beta) {
  levels.validate();
  if (n_total < 1) throw std::invalid_argument("partition_values: N >= 1 required");
  ThermoState th;
  th.beta = beta;
  double z1 = 0.0;
  for (Eigen::Index i = 0; i < levels.count(); ++i)
    z1 += levels.degeneracy(i) * std::exp(-beta * levels.energies(i));
  th.z1 = z1;
  th.log_z = (double)n_total * std::log(z1) - log_factorial((double)n_total);
  if (beta != 0.0) {
    th.free_energy = -th.log_z / beta;
    th.free_energy_defined = true;
  }
  th.internal_energy = mean_energy_at_beta(levels, n_total, beta);
  return th;
}

/// E = N sum_i eps_i e^{-beta eps_i} / Z1.
inline double internal_energy(const LevelSpec& levels, long n_total, double beta) {
  levels.validate();
  return mean_energy_at_beta(levels, n_total, beta);
}

struct MultiplicityMaximizer {
  OccupancyProfile profile;
  double log_p = 0.0;
  bool tie = false;  // another feasible profile attains the same multiplicity
};

/// Exhaustive search over integer occupancy profiles with sum N and total
/// energy matching E_target, returning the multiplicity maximizer. Ties are
/// broken lexicographically and reported.
inline MultiplicityMaximizer brute_force_max_multiplicity(const LevelSpec& levels,
                                                          long n_total,
                                                          double e_target) {
  levels.validate();
  if (n_total > 12) throw std::invalid_argument("brute force limited to N <= 12");
  if (levels.count() > 5)
    throw std::invalid_argument("brute force limited to <= 5 levels");
  const Eigen::Index k = levels.count();
  const double e_tol = 1e-9 * std::max(1.0, std::abs(e_target));

  MultiplicityMaximizer best;
  bool found = false;
  Eigen::VectorXd current = Eigen::VectorXd::Zero(k);
  // depth-first over n_0..n_{k-1}; lexicographic visiting order makes the
  // first maximizer found the lexicographically smallest one
  auto recurse = [&](auto&& self, Eigen::Index level, long remaining,
                     double energy) -> void {
    if (level == k - 1) {
      current(level) = (double)remaining;
      const double e = energy + (double)remaining * levels.energies(level);
      if (std::abs(e - e_target) <= e_tol) {
        const double lp = log_multiplicity(OccupancyProfile{current}, n_total);
        if (!found || lp > best.log_p + 1e-12) {
          best.profile.occupations = current;
          best.log_p = lp;
          best.tie = false;
          found = true;
        } else if (found && std::abs(lp - best.log_p) <= 1e-12) {
          best.tie = true;
        }
      }
      return;
    }
    for (long n = 0; n <= remaining; ++n) {
      current(level) = (double)n;
      self(self, level + 1, remaining - n,
           energy + (double)n * levels.energies(level));
    }
  };
  recurse(recurse, 0, n_total, 0.0);
  if (!found)
    throw std::invalid_argument(
        "brute_force_max_multiplicity: no feasible integer profile");
  return best;
}

/// Largest-remainder rounding of a real profile to integers summing to N.
inline OccupancyProfile round_profile(const OccupancyProfile& profile,
                                      long n_total) {
  const Eigen::Index k = profile.occupations.size();
  Eigen::VectorXd out(k);
  std::vector<std::pair<double, Eigen::Index>> rem;
  long assigned = 0;
  for (Eigen::Index i = 0; i < k; ++i) {
    out(i) = std::floor(profile.occupations(i));
    assigned += (long)out(i);
    rem.push_back({profile.occupations(i) - out(i), i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;  // ties resolved by index order (stable)
  });
  for (long r = 0; r < n_total - assigned; ++r) out(rem[(size_t)r].second) += 1.0;
  return OccupancyProfile{out};
}

/// W^k_int = e^{-beta E^k} / sum_l e^{-beta E^l} over interaction
/// pseudo-particle energies.
inline Eigen::VectorXd pseudo_particle_distribution(
    const Eigen::VectorXd& interaction_energies, double beta) {
  if (interaction_energies.size() == 0)
    throw std::invalid_argument("pseudo_particle_distribution: empty energy list");
  const double shift = beta >= 0 ? interaction_energies.minCoeff()
                                 : interaction_energies.maxCoeff();
  Eigen::VectorXd w =
      (-beta * (interaction_energies.array() - shift)).exp().matrix();
  return w / w.sum();
}

/// Joint product-form distribution W_ik over (free, interaction) energies;
/// factorizes exactly into the two marginals.
inline Eigen::MatrixXd joint_distribution(const Eigen::VectorXd& e0,
                                          const Eigen::VectorXd& e_int,
                                          double beta) {
  if (e0.size() == 0 || e_int.size() == 0)
    throw std::invalid_argument("joint_distribution: empty energy list");
  const Eigen::VectorXd wa = pseudo_particle_distribution(e0, beta);
  const Eigen::VectorXd wb = pseudo_particle_distribution(e_int, beta);
  return wa * wb.transpose();
}

}  // namespace xprob
