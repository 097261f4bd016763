#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "cdcm/errors.hpp"

namespace cdcm {

/// Canonical double-gamma hemodynamic response. The parameters are fixed
/// constants of the model, never estimated.
struct CanonicalHrf {
  static constexpr double alpha1 = 6.0;
  static constexpr double alpha2 = 16.0;
  static constexpr double beta1 = 1.0;
  static constexpr double beta2 = 1.0;
  static constexpr double c = 1.0 / 6.0;
};

/// h(t) = b1^a1/Gamma(a1) t^{a1-1} e^{-b1 t} - c b2^a2/Gamma(a2) t^{a2-1} e^{-b2 t}
inline double hrf_eval(double t) {
  if (t < 0.0 || !std::isfinite(t)) throw invalid_input("hrf_eval: t must be nonnegative");
  if (t == 0.0) return 0.0;  // t^{alpha-1} with alpha > 1
  using H = CanonicalHrf;
  const double g1 = std::pow(H::beta1, H::alpha1) / std::tgamma(H::alpha1) *
                    std::pow(t, H::alpha1 - 1.0) * std::exp(-H::beta1 * t);
  const double g2 = std::pow(H::beta2, H::alpha2) / std::tgamma(H::alpha2) *
                    std::pow(t, H::alpha2 - 1.0) * std::exp(-H::beta2 * t);
  return g1 - H::c * g2;
}

/// Sampled kernel h[i] = h(r i) for i = 0..n; h[0] = 0.
inline Eigen::VectorXd hrf_kernel(double r, int n) {
  if (!(r > 0.0)) throw invalid_input("hrf_kernel: r must be positive");
  if (n < 1) throw invalid_input("hrf_kernel: n must be at least 1");
  Eigen::VectorXd h(n + 1);
  for (int i = 0; i <= n; ++i) h(i) = hrf_eval(r * i);
  return h;
}

}  // namespace cdcm
