#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "cdcm/errors.hpp"

namespace cdcm {

// ============================================================================
// Dormand-Prince 5(4) adaptive integrator
// ============================================================================
// Numeric baseline used by the bench harness and by oracle tests. Kept fully
// independent of the matrix-exponential propagation path.

/// Integrates dy/dt = f(t, y) from t0 to t1 with PI step control.
/// `f` has signature VectorXd(double t, const VectorXd& y).
template <typename F>
Eigen::VectorXd rk45_integrate(F&& f, Eigen::VectorXd y, double t0, double t1,
                               double tol) {
  if (!(tol > 0.0)) throw invalid_input("rk45_integrate: tol must be positive");
  if (t1 < t0) throw invalid_input("rk45_integrate: t1 < t0");
  if (t1 == t0) return y;

  // Dormand-Prince tableau.
  static constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5,
                          c5 = 8.0 / 9;
  static constexpr double a21 = 1.0 / 5;
  static constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                          a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                          a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                          a65 = -5103.0 / 18656;
  static constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                          b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  // 4th-order embedded weights.
  static constexpr double e1 = 5179.0 / 57600, e3 = 7571.0 / 16695,
                          e4 = 393.0 / 640, e5 = -92097.0 / 339200,
                          e6 = 187.0 / 2100, e7 = 1.0 / 40;

  double t = t0;
  double h = (t1 - t0) / 16.0;
  const double hmin = (t1 - t0) * 1e-14;
  Eigen::VectorXd k1 = f(t, y);

  while (t < t1) {
    if (t + h > t1) h = t1 - t;

    Eigen::VectorXd k2 = f(t + c2 * h, y + h * (a21 * k1));
    Eigen::VectorXd k3 = f(t + c3 * h, y + h * (a31 * k1 + a32 * k2));
    Eigen::VectorXd k4 = f(t + c4 * h, y + h * (a41 * k1 + a42 * k2 + a43 * k3));
    Eigen::VectorXd k5 =
        f(t + c5 * h, y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
    Eigen::VectorXd k6 = f(
        t + h, y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5));
    Eigen::VectorXd y5 =
        y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    Eigen::VectorXd k7 = f(t + h, y5);
    Eigen::VectorXd y4 =
        y + h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);

    double sc = tol * (1.0 + y.cwiseAbs().maxCoeff());
    double err = (y5 - y4).cwiseAbs().maxCoeff() / sc;

    if (err <= 1.0 || h <= hmin) {
      t += h;
      y = std::move(y5);
      k1 = std::move(k7);  // FSAL
    }
    double fac = 0.9 * std::pow(err > 0.0 ? err : 1e-10, -0.2);
    h *= std::min(5.0, std::max(0.2, fac));
    if (h < hmin) h = hmin;
  }
  return y;
}

}  // namespace cdcm
