#include <doctest.h>

#include "xprob/ensembles.hpp"
#include "xprob/rng.hpp"

using namespace xprob;

namespace {

LevelSpec make_levels(std::initializer_list<double> energies) {
  LevelSpec levels;
  levels.energies.resize((Eigen::Index)energies.size());
  Eigen::Index i = 0;
  for (double e : energies) levels.energies(i++) = e;
  return levels;
}

OccupancyProfile make_profile(std::initializer_list<double> ns) {
  OccupancyProfile p;
  p.occupations.resize((Eigen::Index)ns.size());
  Eigen::Index i = 0;
  for (double n : ns) p.occupations(i++) = n;
  return p;
}

}  // namespace

TEST_CASE("log_multiplicity") {
  CHECK(log_multiplicity(make_profile({2, 1, 1}), 4) ==
        doctest::Approx(std::log(12.0)).epsilon(1e-13));
  CHECK(log_multiplicity(make_profile({4, 0, 0}), 4) == 0.0);
  CHECK(log_multiplicity(make_profile({1, 1}), 2) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-13));
  CHECK_THROWS_AS(log_multiplicity(make_profile({1.5, 0.5}), 2),
                  std::invalid_argument);
  CHECK_THROWS_AS(log_multiplicity(make_profile({1, 1}), 3),
                  std::invalid_argument);
}

TEST_CASE("boltzmann_profile") {
  SUBCASE("infinite temperature is uniform") {
    const auto p = boltzmann_profile(make_levels({0, 1, 2, 5}), 8, 0.0);
    for (int i = 0; i < 4; ++i)
      CHECK(p.occupations(i) == doctest::Approx(2.0).epsilon(1e-13));
  }
  SUBCASE("two levels at beta = ln2") {
    const auto p = boltzmann_profile(make_levels({0, 1}), 9, std::log(2.0));
    CHECK(p.occupations(0) == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(p.occupations(1) == doctest::Approx(3.0).epsilon(1e-12));
  }
  SUBCASE("low temperature concentrates on the ground level") {
    const auto p = boltzmann_profile(make_levels({0, 1}), 100, 10.5);
    CHECK(p.occupations(0) / 100.0 > 0.999);
  }
  SUBCASE("constraint sum holds") {
    const auto p = boltzmann_profile(make_levels({-2, 0.3, 4}), 17, -0.7);
    CHECK(p.occupations.sum() == doctest::Approx(17.0).epsilon(1e-12));
  }
}

TEST_CASE("particle_level_probability") {
  const auto levels = make_levels({0, 1, 2});
  SUBCASE("beta 0 uniform") {
    const auto w = particle_level_probability(levels, 0.0);
    for (int i = 0; i < 3; ++i)
      CHECK(w(i) == doctest::Approx(1.0 / 3).epsilon(1e-13));
  }
  SUBCASE("consistency with boltzmann_profile") {
    const auto w = particle_level_probability(levels, 0.8);
    const auto p = boltzmann_profile(levels, 5, 0.8);
    for (int i = 0; i < 3; ++i)
      CHECK(w(i) == doctest::Approx(p.occupations(i) / 5.0).epsilon(1e-12));
  }
  SUBCASE("direct evaluation at beta = 1") {
    const auto w = particle_level_probability(levels, 1.0);
    const double z1 = 1 + std::exp(-1.0) + std::exp(-2.0);
    CHECK(w(0) == doctest::Approx(1 / z1).epsilon(1e-13));
    CHECK(w(1) == doctest::Approx(std::exp(-1.0) / z1).epsilon(1e-13));
    CHECK(w(2) == doctest::Approx(std::exp(-2.0) / z1).epsilon(1e-13));
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("solve_beta on the two-level system") {
  const auto levels = make_levels({0, 1});
  const long N = 6;
  CHECK(std::abs(solve_beta(levels, N, N / 2.0)) <= 1e-9);
  CHECK(solve_beta(levels, N, N / 3.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(solve_beta(levels, N, 2.0 * N / 3.0) ==
        doctest::Approx(-std::log(2.0)).epsilon(1e-9));
  CHECK_THROWS_AS(solve_beta(levels, N, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(solve_beta(levels, N, (double)N), std::invalid_argument);
}

TEST_CASE("solve_beta matches the energy target on random level sets") {
  auto rng = make_rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    LevelSpec levels;
    const int k = 2 + (int)(u(rng) * 3);
    levels.energies.resize(k);
    double e = -u(rng);
    for (int i = 0; i < k; ++i) {
      levels.energies(i) = e;
      e += 0.2 + u(rng);
    }
    const long N = 3 + (long)(u(rng) * 8);
    const double span = levels.energies(k - 1) - levels.energies(0);
    const double target =
        (double)N * (levels.energies(0) + span * (0.1 + 0.8 * u(rng)));
    const double beta = solve_beta(levels, N, target);
    CHECK(mean_energy_at_beta(levels, N, beta) ==
          doctest::Approx(target).epsilon(1e-9));
  }
}

TEST_CASE("system_state_probability") {
  SUBCASE("beta 0, d states") {
    const double log_z = std::log(8.0);
    double total = 0;
    for (int m = 0; m < 8; ++m) total += system_state_probability(0.0, 0.0, log_z);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("two particles on two levels, labeled assignments") {
    // energies of the 4 labeled assignments: 0, 1, 1, 2 at beta = ln2
    const double beta = std::log(2.0);
    const double z1 = 1.5;
    const double log_z_labeled = 2.0 * std::log(z1);  // labeled sum, no N!
    const double expect[4] = {4.0 / 9, 2.0 / 9, 2.0 / 9, 1.0 / 9};
    const double energies[4] = {0, 1, 1, 2};
    double total = 0;
    for (int m = 0; m < 4; ++m) {
      const double w = system_state_probability(energies[m], beta, log_z_labeled);
      CHECK(w == doctest::Approx(expect[m]).epsilon(1e-12));
      total += w;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("ratio law") {
    const double beta = 0.37, log_z = 1.234;
    const double we = system_state_probability(2.0, beta, log_z);
    const double wf = system_state_probability(0.5, beta, log_z);
    CHECK(we / wf == doctest::Approx(std::exp(-beta * 1.5)).epsilon(1e-12));
  }
}

TEST_CASE("partition_values") {
  SUBCASE("two levels, beta = ln2, N = 1") {
    const auto th = partition_values(make_levels({0, 1}), 1, std::log(2.0));
    CHECK(th.z1 == doctest::Approx(1.5).epsilon(1e-13));
    CHECK(th.log_z == doctest::Approx(std::log(1.5)).epsilon(1e-13));
    CHECK(th.free_energy_defined);
  }
  SUBCASE("Z1^N equals the brute-force labeled state sum") {
    const auto levels = make_levels({0.0, 0.7, 1.9});
    const double beta = 0.6;
    const long N = 3;
    const auto th = partition_values(levels, N, beta);
    double brute = 0;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c)
          brute += std::exp(-beta * (levels.energies(a) + levels.energies(b) +
                                     levels.energies(c)));
    CHECK(brute == doctest::Approx(std::pow(th.z1, 3)).epsilon(1e-10));
  }
  SUBCASE("N = 1 has no permutation factor") {
    const auto th = partition_values(make_levels({0, 2}), 1, 0.4);
    CHECK(th.log_z == doctest::Approx(std::log(th.z1)).epsilon(1e-13));
  }
  SUBCASE("beta 0 leaves the free energy undefined") {
    const auto th = partition_values(make_levels({0, 1}), 4, 0.0);
    CHECK_FALSE(th.free_energy_defined);
    CHECK(std::isnan(th.free_energy));
    CHECK(th.z1 == doctest::Approx(2.0).epsilon(1e-13));
  }
}

TEST_CASE("internal_energy") {
  SUBCASE("uniform occupancy at beta 0") {
    CHECK(internal_energy(make_levels({0, 1}), 10, 0.0) ==
          doctest::Approx(5.0).epsilon(1e-13));
  }
  SUBCASE("beta = ln2 on unit-split levels") {
    CHECK(internal_energy(make_levels({0, 1}), 3, std::log(2.0)) ==
          doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("equals the occupation-weighted sum") {
    const auto levels = make_levels({-1, 0.4, 2.2});
    const long N = 7;
    const double beta = 0.9;
    const auto p = boltzmann_profile(levels, N, beta);
    CHECK(internal_energy(levels, N, beta) ==
          doctest::Approx(levels.energies.dot(p.occupations)).epsilon(1e-12));
  }
  SUBCASE("finite-difference oracle on random level sets") {
    auto rng = make_rng(4242);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
      LevelSpec levels;
      const int k = 2 + (int)(u(rng) * 3);
      levels.energies.resize(k);
      double e = -u(rng);
      for (int i = 0; i < k; ++i) {
        levels.energies(i) = e;
        e += 0.2 + u(rng);
      }
      const long N = 1 + (long)(u(rng) * 10);
      const double beta = -2.0 + 4.0 * u(rng);
      const double h = 1e-5;
      const double fd = -(partition_values(levels, N, beta + h).log_z -
                          partition_values(levels, N, beta - h).log_z) /
                        (2 * h);
      const double analytic = internal_energy(levels, N, beta);
      CHECK(std::abs(fd - analytic) <=
            1e-6 * std::max(1.0, std::abs(analytic)));
    }
  }
}

TEST_CASE("brute_force_max_multiplicity") {
  SUBCASE("N = 6 on levels 0/1/2 at E = 6") {
    const auto res = brute_force_max_multiplicity(make_levels({0, 1, 2}), 6, 6.0);
    CHECK(res.profile.occupations(0) == 2.0);
    CHECK(res.profile.occupations(1) == 2.0);
    CHECK(res.profile.occupations(2) == 2.0);
    CHECK(std::exp(res.log_p) == doctest::Approx(90.0).epsilon(1e-10));
  }
  SUBCASE("unique feasible profile") {
    const auto res = brute_force_max_multiplicity(make_levels({0, 1}), 2, 1.0);
    CHECK(res.profile.occupations(0) == 1.0);
    CHECK(res.profile.occupations(1) == 1.0);
    CHECK_FALSE(res.tie);
  }
  SUBCASE("infeasible target") {
    CHECK_THROWS_AS(brute_force_max_multiplicity(make_levels({0, 2}), 2, 1.0),
                    std::invalid_argument);
  }
  SUBCASE("enumeration limits enforced") {
    CHECK_THROWS_AS(brute_force_max_multiplicity(make_levels({0, 1}), 13, 6.0),
                    std::invalid_argument);
  }
  SUBCASE("oracle multiplicity dominates the rounded Lagrange profile") {
    const auto levels = make_levels({0, 1, 2});
    for (long N : {4L, 8L, 12L}) {
      const double E = (double)N;  // fixed E/N = 1
      const auto oracle = brute_force_max_multiplicity(levels, N, E);
      const double beta = solve_beta(levels, N, E);
      const auto rounded = round_profile(boltzmann_profile(levels, N, beta), N);
      // rounding can break the energy constraint; compare multiplicities only
      CHECK(oracle.log_p >=
            log_multiplicity(rounded, N) - 1e-9);
    }
  }
  SUBCASE("normalized L1 gap to the rounded profile shrinks with N") {
    const auto levels = make_levels({0, 1, 2});
    double prev_gap = std::numeric_limits<double>::infinity();
    for (long N : {4L, 8L, 12L}) {
      const double E = (double)N;
      const auto oracle = brute_force_max_multiplicity(levels, N, E);
      const double beta = solve_beta(levels, N, E);
      const auto rounded = round_profile(boltzmann_profile(levels, N, beta), N);
      const double gap =
          (oracle.profile.occupations - rounded.occupations).cwiseAbs().sum() /
          (double)N;
      CHECK(gap < prev_gap);
      prev_gap = gap;
    }
  }
}

TEST_CASE("pseudo_particle_distribution") {
  SUBCASE("beta 0 uniform") {
    Eigen::VectorXd e(4);
    e << 0, 1, 5, -3;
    const auto w = pseudo_particle_distribution(e, 0.0);
    for (int i = 0; i < 4; ++i)
      CHECK(w(i) == doctest::Approx(0.25).epsilon(1e-13));
  }
  SUBCASE("single entry") {
    Eigen::VectorXd e(1);
    e << 2.7;
    CHECK(pseudo_particle_distribution(e, 1.3)(0) == doctest::Approx(1.0));
  }
  SUBCASE("two entries at beta = ln2") {
    Eigen::VectorXd e(2);
    e << 0, 1;
    const auto w = pseudo_particle_distribution(e, std::log(2.0));
    CHECK(w(0) == doctest::Approx(2.0 / 3).epsilon(1e-12));
    CHECK(w(1) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  }
}

TEST_CASE("joint_distribution") {
  SUBCASE("beta 0 uniform") {
    Eigen::VectorXd e0(2), ei(3);
    e0 << 0, 1;
    ei << 0, 1, 2;
    const auto w = joint_distribution(e0, ei, 0.0);
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 3; ++k)
        CHECK(w(i, k) == doctest::Approx(1.0 / 6).epsilon(1e-13));
  }
  SUBCASE("factorization on random inputs") {
    auto rng = make_rng(8);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Eigen::VectorXd e0(3), ei(4);
    for (int i = 0; i < 3; ++i) e0(i) = u(rng);
    for (int i = 0; i < 4; ++i) ei(i) = u(rng);
    const double beta = 0.77;
    const auto w = joint_distribution(e0, ei, beta);
    const auto wa = pseudo_particle_distribution(e0, beta);
    const auto wb = pseudo_particle_distribution(ei, beta);
    CHECK((w - wa * wb.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("direct evaluation") {
    Eigen::VectorXd e0(2), ei(2);
    e0 << 0, 1;
    ei << 0, 2;
    const auto w = joint_distribution(e0, ei, 1.0);
    const double z = 1 + std::exp(-2.0) + std::exp(-1.0) + std::exp(-3.0);
    CHECK(w(0, 0) == doctest::Approx(1 / z).epsilon(1e-12));
    CHECK(w(0, 1) == doctest::Approx(std::exp(-2.0) / z).epsilon(1e-12));
    CHECK(w(1, 0) == doctest::Approx(std::exp(-1.0) / z).epsilon(1e-12));
    CHECK(w(1, 1) == doctest::Approx(std::exp(-3.0) / z).epsilon(1e-12));
  }
}

TEST_CASE("mean energy is strictly decreasing in beta") {
  const auto levels = make_levels({-0.5, 0.1, 1.4, 3.0});
  double prev = std::numeric_limits<double>::infinity();
  for (double beta = -3.0; beta <= 3.0; beta += 0.25) {
    const double e = mean_energy_at_beta(levels, 5, beta);
    CHECK(e < prev);
    prev = e;
  }
}
