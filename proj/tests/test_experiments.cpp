#include <doctest.h>

#include "xprob/experiments.hpp"

using namespace xprob;

namespace {

SpinSystem dipolar_chain(int n, std::uint64_t seed) {
  SpinSystem sys;
  sys.n_spins = n;
  auto rng = make_rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < n; ++i) sys.zeeman_frequencies.push_back(u(rng));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) sys.couplings.emplace_back(i, j, u(rng));
  sys.coupling_form = CouplingForm::SecularDipolar;
  return sys;
}

SpinSystem uniform_free_spins(int n, double omega) {
  SpinSystem sys;
  sys.n_spins = n;
  sys.zeeman_frequencies.assign((size_t)n, omega);
  return sys;
}

}  // namespace

TEST_CASE("echo: exact unitary reversal returns the initial state") {
  const SpinSystem sys = dipolar_chain(4, 1);
  const StateVector initial = random_state(16, 2);
  XJumpConfig cfg;
  const EchoResult res = echo_experiment(sys, initial, 2.0, 0.0, cfg, 5);
  CHECK(res.fidelity > 1.0 - 1e-9);
  CHECK(res.n_jumps == 0);
}

TEST_CASE("echo: seeded determinism end to end") {
  const SpinSystem sys = dipolar_chain(4, 1);
  const StateVector initial = random_state(16, 2);
  XJumpConfig cfg;
  cfg.per_particle_rate = 0.4;
  const EchoResult a = echo_experiment(sys, initial, 2.0, 0.05, cfg, 77);
  const EchoResult b = echo_experiment(sys, initial, 2.0, 0.05, cfg, 77);
  CHECK(a.fidelity == b.fidelity);
  CHECK(a.n_jumps == b.n_jumps);
}

TEST_CASE("echo: imperfect reversal degrades with forward time") {
  const SpinSystem sys = dipolar_chain(5, 3);
  const Hamiltonian ham = build_hamiltonian(sys);
  const EigenSystem eig = eigendecompose(ham.total);
  const StateVector initial = random_state(32, 4);
  XJumpConfig cfg;
  // average over a few seeds per rung to iron out phase accidents
  double prev = 1.1;
  for (double T : {1.0, 4.0, 16.0}) {
    double mean = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed)
      mean += echo_experiment(ham, eig, initial, T, 0.05, cfg, 5.0, seed).fidelity;
    mean /= 10;
    CHECK(mean < 1.0);
    CHECK(mean < prev);
    prev = mean;
  }
}

TEST_CASE("echo: jumps destroy the echo") {
  const SpinSystem sys = dipolar_chain(6, 5);
  const Hamiltonian ham = build_hamiltonian(sys);
  const EigenSystem eig = eigendecompose(ham.total);
  const StateVector initial = random_state(64, 6);
  XJumpConfig cfg;
  cfg.per_particle_rate = 0.2;  // ~2.4 expected jumps over both legs
  double mean = 0;
  const int n_seeds = 50;
  for (std::uint64_t seed = 0; seed < (std::uint64_t)n_seeds; ++seed)
    mean += echo_experiment(ham, eig, initial, 1.0, 0.0, cfg, 6.0, seed).fidelity;
  mean /= n_seeds;
  CHECK(mean < 0.99);
}

TEST_CASE("equilibration: rate zero freezes everything") {
  const SpinSystem sys = dipolar_chain(5, 8);
  const EigenSystem eig = eigendecompose(build_hamiltonian(sys).total);
  XJumpConfig cfg;
  const double hw = resolved_shell_half_width(cfg, eig);
  const double center = 0.5 * (eig.energies(0) + eig.energies(eig.dim() - 1));
  const StateVector initial = random_shell_state(eig, center, hw, 9);
  const auto res = equilibration_experiment(eig, initial, 20.0, 50, cfg, 5, 10);
  CHECK(res.n_jumps == 0);
  CHECK(res.max_occupation_drift < 1e-10);
  CHECK(res.shell_weight_drift < 1e-9);
  const double first = res.divergence.values(0);
  for (int k = 1; k < res.divergence.values.size(); ++k)
    CHECK(std::abs(res.divergence.values(k) - first) < 1e-10);
}

TEST_CASE("equilibration: Haar jumps drive shell occupations to uniform") {
  // uniform splitting gives exactly degenerate levels; a narrow shell is a
  // single degenerate level, so the shell set never drifts
  const SpinSystem sys = uniform_free_spins(6, 1.0);
  const EigenSystem eig = eigendecompose(build_hamiltonian(sys).total);
  XJumpConfig cfg;
  cfg.per_particle_rate = 1.0;
  cfg.width_is_fraction = false;
  cfg.shell_half_width = 0.4;
  const StateVector initial = random_shell_state(eig, 0.0, 0.4, 11);
  const auto res = equilibration_experiment(eig, initial, 30.0, 120, cfg, 6, 12);
  CHECK(res.shell.size() == 20);  // C(6,3) states at E = 0
  CHECK(res.shell_weight_drift < 1e-9);
  CHECK(res.divergence.values(res.divergence.values.size() - 1) < 0.15);
}

TEST_CASE("boltzmann_check: frozen dynamics keeps the initial marginal") {
  const SpinSystem sys = uniform_free_spins(6, 1.0);
  XJumpConfig cfg;  // rate 0
  cfg.width_is_fraction = false;
  cfg.shell_half_width = 0.8;
  const double ground = -3.0;
  const std::uint64_t seeds[2] = {5, 6};
  const auto a = boltzmann_check(sys, cfg, ground + 2.0, 5.0, seeds, 40);
  const auto b = boltzmann_check(sys, cfg, ground + 2.0, 50.0, seeds, 40);
  CHECK(a.measured_mean(1) == doctest::Approx(b.measured_mean(1)).epsilon(1e-9));
  CHECK_FALSE(a.hint_warning);
}

TEST_CASE("boltzmann_check: beta 0 regime reaches the uniform marginal") {
  const SpinSystem sys = uniform_free_spins(6, 1.0);
  XJumpConfig cfg;
  cfg.per_particle_rate = 1.0;
  cfg.width_is_fraction = false;
  cfg.shell_half_width = 0.8;
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(s);
  // spectral midpoint: E_target = 0 = ground + N/2 splittings
  const auto res = boltzmann_check(sys, cfg, 0.0, 40.0, seeds, 100);
  CHECK(std::abs(res.beta) < 1e-9);
  CHECK(res.target(1) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(res.mean_tv < 0.05);
}

TEST_CASE("boltzmann_check: interacting system raises the warning") {
  SpinSystem sys = uniform_free_spins(4, 1.0);
  sys.couplings = {{0, 1, 0.5}};
  XJumpConfig cfg;
  cfg.width_is_fraction = false;
  cfg.shell_half_width = 0.8;
  const std::uint64_t seeds[1] = {1};
  const auto res = boltzmann_check(sys, cfg, 0.0, 5.0, seeds, 20);
  CHECK(res.hint_warning);
}

TEST_CASE("correlation: constant observable has zero correlation") {
  const SpinSystem sys = dipolar_chain(4, 13);
  const EigenSystem eig = eigendecompose(build_hamiltonian(sys).total);
  const StateVector initial = random_state(16, 14);
  XJumpConfig cfg;
  cfg.per_particle_rate = 0.5;
  CorrelationParams params;
  params.t_grid.resize(3);
  params.t_grid << 0.0, 1.0, 2.0;
  params.trajectory_time = 80.0;
  const Matrix f = 3.7 * Matrix::Identity(16, 16);
  const Matrix g = sz_site(4, 0);
  const TimeSeries r =
      correlation_experiment(eig, initial, f, g, cfg, 4, params, 15);
  for (Eigen::Index i = 0; i < r.values.size(); ++i)
    CHECK(std::abs(r.values(i)) < 1e-10);
}

TEST_CASE("correlation: zero-lag autocorrelation is a variance") {
  const SpinSystem sys = dipolar_chain(4, 13);
  const EigenSystem eig = eigendecompose(build_hamiltonian(sys).total);
  const StateVector initial = random_state(16, 3);
  XJumpConfig cfg;
  cfg.per_particle_rate = 0.5;
  CorrelationParams params;
  params.t_grid.resize(2);
  params.t_grid << 0.0, 1.0;
  params.trajectory_time = 60.0;
  const Matrix f = sz_site(4, 1);
  const TimeSeries r =
      correlation_experiment(eig, initial, f, f, cfg, 4, params, 16);
  CHECK(r.values(0) >= -1e-10);
}

TEST_CASE("correlation: trajectory too short is an error") {
  const SpinSystem sys = dipolar_chain(3, 2);
  const EigenSystem eig = eigendecompose(build_hamiltonian(sys).total);
  const StateVector initial = random_state(8, 1);
  XJumpConfig cfg;
  CorrelationParams params;
  params.t_grid.resize(2);
  params.t_grid << 0.0, 5.0;
  params.trajectory_time = 10.0;  // only ~2 usable pairs at the largest lag
  const Matrix f = sz_site(3, 0);
  CHECK_THROWS_AS(
      correlation_experiment(eig, initial, f, f, cfg, 3, params, 1),
      std::runtime_error);
}

TEST_CASE("ergodicity_check") {
  const SpinSystem sys = uniform_free_spins(6, 1.0);
  const Hamiltonian ham = build_hamiltonian(sys);
  const EigenSystem eig = eigendecompose(ham.total);
  XJumpConfig cfg;
  cfg.per_particle_rate = 1.0;
  cfg.width_is_fraction = false;
  cfg.shell_half_width = 0.4;
  const StateVector initial = random_shell_state(eig, 0.0, 0.4, 30);

  SUBCASE("identity observable") {
    const auto res = ergodicity_check(eig, initial, Matrix::Identity(64, 64),
                                      cfg, 6, 20.0, 31);
    CHECK(res.time_average == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(res.ensemble_average == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(res.gap < 1e-10);
  }
  SUBCASE("energy observable stays within the shell bound") {
    const double e0 = energy_expectation(initial, eig);
    const auto res = ergodicity_check(eig, initial, ham.total, cfg, 6, 20.0, 32);
    CHECK(std::abs(res.time_average - e0) <= 2 * cfg.shell_half_width + 1e-9);
    CHECK(std::abs(res.ensemble_average - e0) <= 2 * cfg.shell_half_width + 1e-9);
  }
}
