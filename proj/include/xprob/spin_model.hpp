#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "xprob/rng.hpp"

namespace xprob {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;

inline constexpr double kHermiticityTol = 1e-12;

enum class CouplingForm { IsingZZ, HeisenbergXXX, SecularDipolar };

inline CouplingForm coupling_form_from_string(const std::string& s) {
  if (s == "ising-zz") return CouplingForm::IsingZZ;
  if (s == "heisenberg-xxx") return CouplingForm::HeisenbergXXX;
  if (s == "secular-dipolar") return CouplingForm::SecularDipolar;
  throw std::invalid_argument("unknown coupling_form: " + s);
}

inline std::string to_string(CouplingForm f) {
  switch (f) {
    case CouplingForm::IsingZZ: return "ising-zz";
    case CouplingForm::HeisenbergXXX: return "heisenberg-xxx";
    case CouplingForm::SecularDipolar: return "secular-dipolar";
  }
  return "?";
}

/// A finite system of spin-1/2 particles in a static field, hbar = 1.
/// Basis convention: bit i of a basis index holds spin i, bit 0 = up
/// (sigma_z eigenvalue +1), so a single spin has H = diag(w/2, -w/2).
struct SpinSystem {
  int n_spins = 1;
  std::vector<double> zeeman_frequencies;                // omega_i, rad/time
  std::vector<std::tuple<int, int, double>> couplings;   // (i, j, strength), i != j
  CouplingForm coupling_form = CouplingForm::IsingZZ;
  int max_spins = 14;

  Eigen::Index dim() const { return Eigen::Index(1) << n_spins; }

  void validate() const {
    if (n_spins < 1) throw std::invalid_argument("n_spins must be >= 1");
    if (n_spins > max_spins)
      throw std::invalid_argument("n_spins exceeds configured maximum (" +
                                  std::to_string(max_spins) + ")");
    if ((int)zeeman_frequencies.size() != n_spins)
      throw std::invalid_argument("zeeman_frequencies size must equal n_spins");
    for (auto& [i, j, J] : couplings) {
      (void)J;
      if (i == j) throw std::invalid_argument("coupling self-pair (i,i) not allowed");
      if (i < 0 || j < 0 || i >= n_spins || j >= n_spins)
        throw std::invalid_argument("coupling index out of range");
    }
  }
};

struct Hamiltonian {
  Matrix total;        // H = H0 + Hint
  Matrix zeeman;       // H0
  Matrix interaction;  // Hint
};

inline bool is_hermitian(const Matrix& M, double tol = kHermiticityTol) {
  if (M.rows() != M.cols()) return false;
  return (M - M.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

namespace pauli {
inline Eigen::Matrix2cd x() {
  Eigen::Matrix2cd m;
  m << 0, 1, 1, 0;
  return m;
}
inline Eigen::Matrix2cd y() {
  Eigen::Matrix2cd m;
  m << 0, Complex(0, -1), Complex(0, 1), 0;
  return m;
}
inline Eigen::Matrix2cd z() {
  Eigen::Matrix2cd m;
  m << 1, 0, 0, -1;
  return m;
}
}  // namespace pauli

/// Embed a single-site 2x2 operator at `site` into the 2^n space.
inline Matrix embed_one_site(int n, int site, const Eigen::Matrix2cd& op) {
  const Eigen::Index dim = Eigen::Index(1) << n;
  Matrix out = Matrix::Zero(dim, dim);
  for (Eigen::Index b = 0; b < dim; ++b) {
    const int s = (b >> site) & 1;
    for (int sp = 0; sp < 2; ++sp) {
      const Complex v = op(sp, s);
      if (v == Complex(0, 0)) continue;
      const Eigen::Index bp = (b & ~(Eigen::Index(1) << site)) |
                              (Eigen::Index(sp) << site);
      out(bp, b) += v;
    }
  }
  return out;
}

/// Embed a two-site 4x4 operator on sites (i, j) into the 2^n space.
/// Local index convention: l = 2*s_i + s_j.
inline Matrix embed_two_site(int n, int i, int j, const Eigen::Matrix4cd& op) {
  const Eigen::Index dim = Eigen::Index(1) << n;
  Matrix out = Matrix::Zero(dim, dim);
  const Eigen::Index mi = Eigen::Index(1) << i;
  const Eigen::Index mj = Eigen::Index(1) << j;
  for (Eigen::Index b = 0; b < dim; ++b) {
    const int l = 2 * ((b >> i) & 1) + ((b >> j) & 1);
    for (int lp = 0; lp < 4; ++lp) {
      const Complex v = op(lp, l);
      if (v == Complex(0, 0)) continue;
      Eigen::Index bp = b & ~(mi | mj);
      if (lp & 2) bp |= mi;
      if (lp & 1) bp |= mj;
      out(bp, b) += v;
    }
  }
  return out;
}

/// Two-spin interaction term for one coupled pair, strength J.
inline Eigen::Matrix4cd pair_term(CouplingForm form, double J) {
  using Eigen::Matrix4cd;
  const Eigen::Matrix2cd sx = pauli::x(), sy = pauli::y(), sz = pauli::z();
  auto kron2 = [](const Eigen::Matrix2cd& a, const Eigen::Matrix2cd& b) {
    Matrix4cd out;
    for (int r = 0; r < 2; ++r)
      for (int c = 0; c < 2; ++c) out.block<2, 2>(2 * r, 2 * c) = a(r, c) * b;
    return out;
  };
  const Matrix4cd zz = kron2(sz, sz), xx = kron2(sx, sx), yy = kron2(sy, sy);
  switch (form) {
    case CouplingForm::IsingZZ:
      return (J / 4.0) * zz;
    case CouplingForm::HeisenbergXXX:
      return (J / 4.0) * (xx + yy + zz);
    case CouplingForm::SecularDipolar:
      return (J / 4.0) * (2.0 * zz - xx - yy);
  }
  throw std::invalid_argument("unknown coupling_form");
}

/// H = H0 + Hint: Zeeman part sum_i (w_i/2) sigma_z^i, interaction part
/// the sum of pair terms over the coupling list.
inline Hamiltonian build_hamiltonian(const SpinSystem& sys) {
  sys.validate();
  const Eigen::Index dim = sys.dim();
  Matrix h0 = Matrix::Zero(dim, dim);
  for (Eigen::Index b = 0; b < dim; ++b) {
    double e = 0;
    for (int i = 0; i < sys.n_spins; ++i)
      e += 0.5 * sys.zeeman_frequencies[i] * (((b >> i) & 1) ? -1.0 : 1.0);
    h0(b, b) = e;
  }
  Matrix hint = Matrix::Zero(dim, dim);
  for (auto& [i, j, J] : sys.couplings)
    hint += embed_two_site(sys.n_spins, i, j, pair_term(sys.coupling_form, J));
  return Hamiltonian{h0 + hint, std::move(h0), std::move(hint)};
}

inline Matrix negate(const Matrix& H) { return -H; }

/// Largest-magnitude eigenvalue of a Hermitian matrix.
inline double spectral_norm(const Matrix& H) {
  if (H.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(H, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

/// Imperfect sign reversal: -H + eps * V with V a seeded random Hermitian
/// matrix rescaled so its spectral norm matches that of H. eps = 0 returns
/// exactly -H.
inline Matrix perturb_reversal(const Matrix& H, double epsilon,
                               std::uint64_t seed) {
  if (epsilon < 0) throw std::invalid_argument("epsilon must be >= 0");
  if (epsilon == 0.0) return negate(H);
  const Eigen::Index dim = H.rows();
  auto rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix A(dim, dim);
  for (Eigen::Index r = 0; r < dim; ++r)
    for (Eigen::Index c = 0; c < dim; ++c) A(r, c) = Complex(gauss(rng), gauss(rng));
  Matrix V = 0.5 * (A + A.adjoint());
  const double nv = spectral_norm(V);
  const double nh = spectral_norm(H);
  if (nv > 0 && nh > 0) V *= nh / nv;
  return -H + epsilon * V;
}

}  // namespace xprob
