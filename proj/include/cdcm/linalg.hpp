#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <utility>

#include "cdcm/errors.hpp"

namespace cdcm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ============================================================================
// Dense kernels for affine ODE propagation
// ============================================================================

inline bool all_finite(const Eigen::Ref<const MatrixXd>& m) {
  return m.allFinite();
}

namespace detail {

// Higham (2005) scaling threshold for the degree-13 Pade approximant.
inline constexpr double kPadeTheta13 = 5.371920351148152;

inline double one_norm(const MatrixXd& a) {
  return a.cwiseAbs().colwise().sum().maxCoeff();
}

}  // namespace detail

/// Matrix exponential by scaling-and-squaring with a degree-13 Pade
/// approximant.
inline MatrixXd mat_exp(const MatrixXd& m) {
  if (m.rows() != m.cols()) throw invalid_input("mat_exp: matrix must be square");
  if (!all_finite(m)) throw invalid_input("mat_exp: non-finite entries");

  const Eigen::Index d = m.rows();
  const MatrixXd id = MatrixXd::Identity(d, d);

  int squarings = 0;
  double norm = detail::one_norm(m);
  if (norm > detail::kPadeTheta13) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / detail::kPadeTheta13)));
  }
  const MatrixXd a = m / std::exp2(squarings);

  static constexpr double b[] = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
      1187353796428800.0,  129060195264000.0,   10559470521600.0,
      670442572800.0,      33522128640.0,       1323241920.0,
      40840800.0,          960960.0,            16380.0,
      182.0,               1.0};

  const MatrixXd a2 = a * a;
  const MatrixXd a4 = a2 * a2;
  const MatrixXd a6 = a2 * a4;
  const MatrixXd u =
      a * (a6 * (b[13] * a6 + b[11] * a4 + b[9] * a2) + b[7] * a6 + b[5] * a4 +
           b[3] * a2 + b[1] * id);
  const MatrixXd v = a6 * (b[12] * a6 + b[10] * a4 + b[8] * a2) + b[6] * a6 +
                     b[4] * a4 + b[2] * a2 + b[0] * id;

  MatrixXd f = (v - u).lu().solve(v + u);
  for (int i = 0; i < squarings; ++i) f = f * f;
  return f;
}

/// Antiderivative matrix w(t; A) = sum_k t^{k+1}/(k+1)! A^k, so that
/// e^{tA} = I + A w(t; A). Evaluated through the augmented block
/// exponential of [[A, I], [0, 0]] t, which stays exact for singular A.
inline MatrixXd w_antideriv(double t, const MatrixXd& a) {
  if (t < 0.0) throw invalid_input("w_antideriv: t must be nonnegative");
  if (a.rows() != a.cols()) throw invalid_input("w_antideriv: matrix must be square");
  if (!all_finite(a) || !std::isfinite(t))
    throw invalid_input("w_antideriv: non-finite input");

  const Eigen::Index d = a.rows();
  MatrixXd aug = MatrixXd::Zero(2 * d, 2 * d);
  aug.topLeftCorner(d, d) = t * a;
  aug.topRightCorner(d, d) = t * MatrixXd::Identity(d, d);
  return mat_exp(aug).topRightCorner(d, d);
}

/// Propagator of the affine system zdot = A z + c over one interval:
/// z(tau) = E z0 + p with E = e^{A tau}, p = w(tau; A) c. Both blocks drop
/// out of a single (d+1)-dimensional augmented exponential.
inline std::pair<MatrixXd, VectorXd> affine_propagator(const MatrixXd& a,
                                                       const VectorXd& c,
                                                       double tau) {
  if (tau < 0.0) throw invalid_input("affine_propagator: tau must be nonnegative");
  if (a.rows() != a.cols() || c.size() != a.rows())
    throw invalid_input("affine_propagator: dimension mismatch");
  if (!all_finite(a) || !all_finite(c) || !std::isfinite(tau))
    throw invalid_input("affine_propagator: non-finite input");

  const Eigen::Index d = a.rows();
  MatrixXd aug = MatrixXd::Zero(d + 1, d + 1);
  aug.topLeftCorner(d, d) = tau * a;
  aug.topRightCorner(d, 1) = tau * c;
  const MatrixXd e = mat_exp(aug);
  return {e.topLeftCorner(d, d), e.topRightCorner(d, 1)};
}

/// Exact affine-ODE step. Uses the w-form, never A^{-1}, so singular A is
/// handled without special cases.
inline VectorXd affine_step(const VectorXd& z0, const MatrixXd& a,
                            const VectorXd& c, double tau) {
  if (!all_finite(z0)) throw invalid_input("affine_step: non-finite state");
  auto [e, p] = affine_propagator(a, c, tau);
  return e * z0 + p;
}

/// Unique real logarithm of a matrix with d distinct, strictly positive
/// real eigenvalues: L = P diag(log lambda) P^{-1}.
///
/// Eigenvalue policy: imaginary parts below 1e-10 (relative to the spectral
/// scale) count as real; pairwise relative gaps must be at least 1e-8.
inline MatrixXd mat_log_real(const MatrixXd& phi) {
  if (phi.rows() != phi.cols()) throw invalid_input("mat_log_real: matrix must be square");
  if (!all_finite(phi)) throw invalid_input("mat_log_real: non-finite entries");

  const Eigen::Index d = phi.rows();
  Eigen::EigenSolver<MatrixXd> es(phi);
  if (es.info() != Eigen::Success)
    throw not_real_log_identifiable("mat_log_real: eigendecomposition failed");

  const Eigen::VectorXcd lam = es.eigenvalues();
  const double scale = lam.cwiseAbs().maxCoeff();
  if (!(scale > 0.0))
    throw not_real_log_identifiable("mat_log_real: zero spectrum");

  for (Eigen::Index i = 0; i < d; ++i) {
    if (std::abs(lam(i).imag()) > 1e-10 * scale)
      throw not_real_log_identifiable("mat_log_real: complex eigenvalue");
    if (lam(i).real() <= 0.0)
      throw not_real_log_identifiable("mat_log_real: non-positive eigenvalue");
  }
  bool repeated = false;
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i + 1; j < d; ++j)
      if (std::abs(lam(i).real() - lam(j).real()) < 1e-8 * scale) repeated = true;

  const MatrixXd p = es.eigenvectors().real();
  if (repeated) {
    // A repeated eigenvalue is tolerable only when the matrix is still
    // honestly diagonalizable (e.g. the identity); a defective or
    // near-defective eigenbasis has no reliable real logarithm here.
    Eigen::JacobiSVD<MatrixXd> svd(p);
    const double smin = svd.singularValues().minCoeff();
    if (!(smin > 0.0) || svd.singularValues().maxCoeff() / smin > 1e8)
      throw not_real_log_identifiable("mat_log_real: repeated eigenvalue");
  }
  VectorXd loglam(d);
  for (Eigen::Index i = 0; i < d; ++i) loglam(i) = std::log(lam(i).real());
  // L = P diag(loglam) P^{-1}, solved as P^T L^T = (P diag)^T.
  const MatrixXd y = p * loglam.asDiagonal();
  return p.transpose().partialPivLu().solve(y.transpose()).transpose();
}

/// Frechet derivative of the matrix exponential at M in direction E,
/// read off the top-right block of exp([[M, E], [0, M]]). Linear in E,
/// so E is normalized first to balance the block norms.
inline MatrixXd mat_exp_frechet(const MatrixXd& m, const MatrixXd& e) {
  if (m.rows() != m.cols() || e.rows() != m.rows() || e.cols() != m.cols())
    throw invalid_input("mat_exp_frechet: dimension mismatch");
  const double s = e.cwiseAbs().maxCoeff();
  if (s == 0.0) return MatrixXd::Zero(m.rows(), m.cols());
  const Eigen::Index d = m.rows();
  MatrixXd aug = MatrixXd::Zero(2 * d, 2 * d);
  aug.topLeftCorner(d, d) = m;
  aug.bottomRightCorner(d, d) = m;
  aug.topRightCorner(d, d) = e / s;
  return s * mat_exp(aug).topRightCorner(d, d);
}

}  // namespace cdcm
