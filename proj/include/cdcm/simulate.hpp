#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <utility>

#include "cdcm/errors.hpp"
#include "cdcm/model.hpp"
#include "cdcm/rng.hpp"

namespace cdcm {

// ============================================================================
// Benchmark designs and ground-truth models
// ============================================================================

/// Block design alternating rest, U1, rest, U2 in 10-TR blocks; TR 2 s,
/// 150 scans, two stimuli.
inline StimulusDesign benchmark_design() {
  const int n = 150, m = 2, block_len = 10;
  MatrixXi u = MatrixXi::Zero(n, m);
  for (int b = 0; b * block_len < n; ++b) {
    const int phase = b % 4;  // rest, U1, rest, U2
    for (int j = b * block_len; j < (b + 1) * block_len && j < n; ++j) {
      if (phase == 1) u(j, 0) = 1;
      if (phase == 3) u(j, 1) = 1;
    }
  }
  return block_partition(u, 2.0);
}

/// Two-ROI, two-stimulus ground truth:
///   A = [[-0.55, 0.3], [0.4, -0.55]], B2(1,2) = -0.2, C(1,1) = 0.7,
///   s* = 0.1, beta = 0. Self-loops sit at nu = log(1.1).
inline std::pair<Hypothesis, ParamSet> simple_model_truth() {
  Hypothesis h;
  h.d = 2;
  h.m = 2;
  h.mask_a = BoolMat::Constant(2, 2, true);
  h.mask_b = {BoolMat::Constant(2, 2, false), BoolMat::Constant(2, 2, false)};
  h.mask_b[1](0, 1) = true;
  h.mask_c = BoolMat::Constant(2, 2, false);
  h.mask_c(0, 0) = true;
  h.validate();

  ParamSet p = ParamSet::zero(h);
  p.nu_diag_a.setConstant(std::log(0.55 / 0.5));
  p.offdiag_a << 0.3, 0.4;  // A(1,2), A(2,1)
  p.b_entries << -0.2;
  p.c_entries << 0.7;
  p.s_star.setConstant(0.1);
  return {std::move(h), std::move(p)};
}

/// k copies of the simple model chained into a d = 2k system. Adjacent
/// copies are coupled both ways (forward 0.3, backward 0.1), which keeps
/// every block matrix tridiagonal with sign-matched couplings and so keeps
/// the spectrum real and simple. k = 3 gives the 22-parameter chain model.
inline std::pair<Hypothesis, ParamSet> chain_models(int k) {
  if (k < 1) throw invalid_input("chain_models: k must be >= 1");
  const int d = 2 * k, m = 2;

  Hypothesis h;
  h.d = d;
  h.m = m;
  h.mask_a = BoolMat::Constant(d, d, false);
  for (int i = 0; i < d; ++i) h.mask_a(i, i) = true;
  h.mask_b = {BoolMat::Constant(d, d, false), BoolMat::Constant(d, d, false)};
  h.mask_c = BoolMat::Constant(d, m, false);
  for (int c = 0; c < k; ++c) {
    const int r0 = 2 * c;
    h.mask_a(r0, r0 + 1) = true;
    h.mask_a(r0 + 1, r0) = true;
    h.mask_b[1](r0, r0 + 1) = true;
    h.mask_c(r0, 0) = true;
    if (c + 1 < k) {
      h.mask_a(r0 + 2, r0 + 1) = true;  // forward into the next copy
      h.mask_a(r0 + 1, r0 + 2) = true;  // backward
    }
  }
  h.validate();

  ParamSet p = ParamSet::zero(h);
  p.nu_diag_a.setConstant(std::log(0.55 / 0.5));
  for (std::size_t i = 0; i < h.off_a.size(); ++i) {
    const auto& e = h.off_a[i];
    double v = 0.0;
    if (e.row + 1 == e.col) v = (e.row % 2 == 0) ? 0.3 : 0.1;  // upper band
    if (e.row == e.col + 1) v = (e.col % 2 == 0) ? 0.4 : 0.3;  // lower band
    p.offdiag_a(static_cast<Eigen::Index>(i)) = v;
  }
  p.b_entries.setConstant(-0.2);
  p.c_entries.setConstant(0.7);
  p.s_star.setConstant(0.1);
  return {std::move(h), std::move(p)};
}

// ============================================================================
// Forward simulation
// ============================================================================

struct SimulationSpec {
  ParamSet truth;
  Hypothesis hypothesis;
  StimulusDesign design;
  double snr = 1.68;
  std::uint64_t seed = 0;
  bool range_clamp = true;
};

struct TrajectoryBundle {
  MatrixXd z;        // latent states z(t_0..t_{n-1})
  MatrixXd mu;       // convolved means at t_1..t_n
  MatrixXd y;        // simulated BOLD at t_1..t_n
  VectorXd sigma;    // per-ROI noise SD before clamping
  double noise_scale = 1.0;  // range-4 clamp factor actually applied
};

namespace detail {

inline double matrix_range(const MatrixXd& y) {
  return y.maxCoeff() - y.minCoeff();
}

/// Largest s in [0, 1] with range(base + s * noise) <= limit. The range is a
/// convex function of s, so bisection converges monotonically.
inline double largest_noise_scale(const MatrixXd& base, const MatrixXd& noise,
                                  double limit) {
  if (matrix_range(base + noise) <= limit) return 1.0;
  if (matrix_range(base) > limit) return 0.0;
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (matrix_range(base + mid * noise) <= limit)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

}  // namespace detail

/// Noiseless forward pass plus SNR-targeted Gaussian noise. The noise SD in
/// ROI l is sample_SD(mu_l) / snr; when range_clamp is set and the simulated
/// series spans more than 4 units, the noise is shrunk by the largest factor
/// that restores the range bound. Per-ROI noise streams are independent, so
/// the draw for ROI l does not depend on how many ROIs exist.
inline TrajectoryBundle simulate(const SimulationSpec& spec) {
  if (!(spec.snr > 0.0)) throw invalid_input("simulate: snr must be positive");
  const int n = spec.design.n();
  const int d = spec.hypothesis.d;

  TrajectoryBundle out;
  out.z = neural_trajectory(spec.truth, spec.hypothesis, spec.design);
  out.mu = convolve(out.z, hrf_kernel(spec.design.r, n));

  out.sigma = VectorXd(d);
  for (int l = 0; l < d; ++l) {
    const double mean = out.mu.col(l).mean();
    const double var =
        (out.mu.col(l).array() - mean).square().sum() / (n - 1);
    if (!(var > 0.0))
      throw degenerate_signal("simulate: zero-variance mean signal in ROI " +
                              std::to_string(l + 1));
    out.sigma(l) = std::sqrt(var) / spec.snr;
  }

  MatrixXd noise(n, d);
  for (int l = 0; l < d; ++l) {
    Rng rng = Rng::stream(spec.seed, static_cast<std::uint64_t>(l));
    for (int j = 0; j < n; ++j) noise(j, l) = out.sigma(l) * rng.normal();
  }

  MatrixXd base = out.mu;
  base.rowwise() += spec.truth.beta.transpose();
  out.noise_scale = 1.0;
  if (spec.range_clamp)
    out.noise_scale = detail::largest_noise_scale(base, noise, 4.0);
  out.y = base + out.noise_scale * noise;
  return out;
}

}  // namespace cdcm
