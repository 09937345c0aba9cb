#pragma once

#include <Eigen/Dense>
#include <stdexcept>

#include "xprob/spin_model.hpp"

namespace xprob {

/// Amplitudes a_m over the energy eigenbasis of some Hamiltonian.
using StateVector = Eigen::VectorXcd;

/// Spectral decomposition H = basis * diag(energies) * basis^dagger,
/// energies ascending, basis unitary.
struct EigenSystem {
  Eigen::VectorXd energies;
  Matrix basis;

  Eigen::Index dim() const { return energies.size(); }
  double spectral_range() const {
    return energies.size() ? energies(energies.size() - 1) - energies(0) : 0.0;
  }
};

inline EigenSystem eigendecompose(const Matrix& H) {
  if (!is_hermitian(H, 1e-10))
    throw std::invalid_argument("eigendecompose: matrix is not Hermitian");
  Eigen::SelfAdjointEigenSolver<Matrix> es(H);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecompose: solver failed");
  return EigenSystem{es.eigenvalues(), es.eigenvectors()};
}

/// Diagonal-phase evolution: a_m(t) = a_m(0) exp(-i E_m t).
inline StateVector evolve(const StateVector& state, const EigenSystem& eig,
                          double t) {
  if (state.size() != eig.dim())
    throw std::invalid_argument("evolve: dimension mismatch");
  return state.array() *
         (Complex(0, -t) * eig.energies.array().cast<Complex>()).exp();
}

/// |a_m|^2, the probability of finding the system at energy E_m.
inline Eigen::VectorXd occupations(const StateVector& state) {
  return state.cwiseAbs2();
}

inline double energy_expectation(const StateVector& state,
                                 const EigenSystem& eig) {
  if (state.size() != eig.dim())
    throw std::invalid_argument("energy_expectation: dimension mismatch");
  return occupations(state).dot(eig.energies);
}

/// <psi|A|psi> with psi = basis * state; returns the real part.
inline double observable_expectation(const StateVector& state,
                                     const EigenSystem& eig, const Matrix& A) {
  if (state.size() != eig.dim() || A.rows() != eig.dim())
    throw std::invalid_argument("observable_expectation: dimension mismatch");
  const StateVector psi = eig.basis * state;
  const Complex v = psi.dot(A * psi);
  return v.real();
}

/// Squared overlap |<a|b>|^2 of two states in the same basis.
inline double fidelity(const StateVector& a, const StateVector& b) {
  return std::norm(a.dot(b));
}

/// Seeded random normalized state.
inline StateVector random_state(Eigen::Index dim, std::uint64_t seed) {
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  StateVector v(dim);
  for (Eigen::Index m = 0; m < dim; ++m) v(m) = Complex(gauss(rng), gauss(rng));
  v.normalize();
  return v;
}

}  // namespace xprob
