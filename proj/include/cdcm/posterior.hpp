#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "cdcm/errors.hpp"
#include "cdcm/hrf.hpp"
#include "cdcm/linalg.hpp"
#include "cdcm/model.hpp"

namespace cdcm {

// ============================================================================
// Unconstrained parameterization
// ============================================================================
// Layout: [nu_diagA | offdiag A | B entries | C entries | s* | beta | log sigma].
// Only sigma needs a transform; nu_diagA is unconstrained by construction.

enum class ParamKind { DiagNu, Plain, LogSigma };

struct ParamLayout {
  int d = 0;
  int na = 0, nb = 0, nc = 0;
  int off_nu = 0, off_a = 0, off_b = 0, off_c = 0, off_s = 0, off_beta = 0,
      off_lsig = 0;
  int total = 0;
  int p_theta = 0;

  static ParamLayout of(const Hypothesis& h) {
    ParamLayout l;
    l.d = h.d;
    l.na = static_cast<int>(h.off_a.size());
    l.nb = static_cast<int>(h.idx_b.size());
    l.nc = static_cast<int>(h.idx_c.size());
    l.off_nu = 0;
    l.off_a = l.d;
    l.off_b = l.off_a + l.na;
    l.off_c = l.off_b + l.nb;
    l.off_s = l.off_c + l.nc;
    l.off_beta = l.off_s + l.d;
    l.off_lsig = l.off_beta + l.d;
    l.total = l.off_lsig + l.d;
    l.p_theta = l.d + l.na + l.nb + l.nc;
    return l;
  }
};

inline VectorXd pack_params(const ParamSet& p, const Hypothesis& h) {
  const ParamLayout l = ParamLayout::of(h);
  VectorXd x(l.total);
  x.segment(l.off_nu, l.d) = p.nu_diag_a;
  x.segment(l.off_a, l.na) = p.offdiag_a;
  x.segment(l.off_b, l.nb) = p.b_entries;
  x.segment(l.off_c, l.nc) = p.c_entries;
  x.segment(l.off_s, l.d) = p.s_star;
  x.segment(l.off_beta, l.d) = p.beta;
  x.segment(l.off_lsig, l.d) = p.sigma.array().log();
  return x;
}

inline ParamSet unpack_params(const VectorXd& x, const Hypothesis& h) {
  const ParamLayout l = ParamLayout::of(h);
  if (x.size() != l.total) throw invalid_input("unpack_params: wrong dimension");
  ParamSet p;
  p.nu_diag_a = x.segment(l.off_nu, l.d);
  p.offdiag_a = x.segment(l.off_a, l.na);
  p.b_entries = x.segment(l.off_b, l.nb);
  p.c_entries = x.segment(l.off_c, l.nc);
  p.s_star = x.segment(l.off_s, l.d);
  p.beta = x.segment(l.off_beta, l.d);
  p.sigma = x.segment(l.off_lsig, l.d).array().exp();
  return p;
}

inline std::vector<std::string> param_names(const Hypothesis& h) {
  std::vector<std::string> names;
  for (int i = 0; i < h.d; ++i) names.push_back("nu_A_" + std::to_string(i + 1));
  for (const auto& e : h.off_a)
    names.push_back("A_" + std::to_string(e.row + 1) + "_" + std::to_string(e.col + 1));
  for (const auto& e : h.idx_b)
    names.push_back("B_" + std::to_string(e.stim + 1) + "_" +
                    std::to_string(e.row + 1) + "_" + std::to_string(e.col + 1));
  for (const auto& e : h.idx_c)
    names.push_back("C_" + std::to_string(e.row + 1) + "_" + std::to_string(e.stim + 1));
  for (int i = 0; i < h.d; ++i) names.push_back("s_star_" + std::to_string(i + 1));
  for (int i = 0; i < h.d; ++i) names.push_back("beta_" + std::to_string(i + 1));
  for (int i = 0; i < h.d; ++i) names.push_back("log_sigma_" + std::to_string(i + 1));
  return names;
}

inline std::vector<ParamKind> param_kinds(const Hypothesis& h) {
  const ParamLayout l = ParamLayout::of(h);
  std::vector<ParamKind> kinds(static_cast<std::size_t>(l.total), ParamKind::Plain);
  for (int i = 0; i < l.d; ++i) kinds[static_cast<std::size_t>(l.off_nu + i)] = ParamKind::DiagNu;
  for (int i = 0; i < l.d; ++i)
    kinds[static_cast<std::size_t>(l.off_lsig + i)] = ParamKind::LogSigma;
  return kinds;
}

// ============================================================================
// Posterior evaluation
// ============================================================================

/// Immutable per-fit context: data, kernel, and the transition-system map.
/// Shareable across threads.
struct FitContext {
  Hypothesis h;
  StimulusDesign design;
  MatrixXd y;
  VectorXd hker;
  TransitionSystems ts;
  ParamLayout layout;

  static FitContext make(Hypothesis h, StimulusDesign design, MatrixXd y) {
    if (y.rows() != design.n() || y.cols() != h.d)
      throw invalid_input("FitContext: data dimensions do not match design");
    if (!all_finite(y)) throw invalid_input("FitContext: non-finite data");
    FitContext ctx;
    ctx.hker = hrf_kernel(design.r, design.n());
    ctx.ts = transition_systems(design);
    ctx.layout = ParamLayout::of(h);
    ctx.h = std::move(h);
    ctx.design = std::move(design);
    ctx.y = std::move(y);
    return ctx;
  }
};

namespace detail {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Log prior plus log |d sigma / d log sigma| in the unconstrained space;
/// optionally accumulates its gradient.
inline double unconstrained_prior(const VectorXd& x, const FitContext& ctx,
                                  VectorXd* grad) {
  const ParamLayout& l = ctx.layout;
  double lp = 0.0;
  auto add_normal = [&](int idx, double sd) {
    lp += normal_lpdf(x(idx), sd);
    if (grad) (*grad)(idx) += -x(idx) / (sd * sd);
  };
  for (int i = 0; i < l.d; ++i) add_normal(l.off_nu + i, prior::sigma_nu_diag);
  for (int i = 0; i < l.na; ++i) add_normal(l.off_a + i, prior::sigma_nu_off);
  for (int i = 0; i < l.nb; ++i) {
    const auto& e = ctx.h.idx_b[static_cast<std::size_t>(i)];
    add_normal(l.off_b + i, e.row == e.col ? prior::sigma_nu_diag : prior::sigma_nu_off);
  }
  for (int i = 0; i < l.nc; ++i) add_normal(l.off_c + i, prior::sigma_nu_off);
  for (int i = 0; i < l.d; ++i) add_normal(l.off_s + i, prior::sigma_s);
  for (int i = 0; i < l.d; ++i) add_normal(l.off_beta + i, prior::sigma_beta);
  for (int i = 0; i < l.d; ++i) {
    const double sigma = std::exp(x(l.off_lsig + i));
    // Exp(rate) density on the SD scale plus the log-Jacobian of sigma = e^x.
    lp += std::log(prior::sigma_rate) - prior::sigma_rate * sigma +
          x(l.off_lsig + i);
    if (grad) (*grad)(l.off_lsig + i) += -prior::sigma_rate * sigma + 1.0;
  }
  return lp;
}

}  // namespace detail

/// Log posterior density on the unconstrained scale. Returns -inf for any
/// non-finite intermediate (a rejection, not an error).
inline double log_posterior(const VectorXd& x, const FitContext& ctx) {
  if (!all_finite(x)) return detail::kNegInf;
  const ParamSet p = unpack_params(x, ctx.h);

  const int n = ctx.design.n();
  const int d = ctx.h.d;
  std::vector<MatrixXd> prop_e;
  std::vector<VectorXd> prop_p;
  for (const auto& u : ctx.ts.stimuli) {
    auto [at, ct] = assemble_block_system(p, ctx.h, u);
    auto [e, pv] = affine_propagator(at, ct, ctx.design.r);
    if (!all_finite(e) || !all_finite(pv)) return detail::kNegInf;
    prop_e.push_back(std::move(e));
    prop_p.push_back(std::move(pv));
  }
  MatrixXd z(n, d);
  z.row(0) = p.s_star.transpose();
  for (int j = 0; j + 1 < n; ++j) {
    const int s = ctx.ts.of_transition[static_cast<std::size_t>(j)];
    z.row(j + 1) = (prop_e[static_cast<std::size_t>(s)] * z.row(j).transpose() +
                    prop_p[static_cast<std::size_t>(s)])
                       .transpose();
  }
  if (!all_finite(z)) return detail::kNegInf;
  const MatrixXd mu = convolve(z, ctx.hker);

  double ll = 0.0;
  for (int l2 = 0; l2 < d; ++l2) {
    const double s2 = p.sigma(l2) * p.sigma(l2);
    const double norm = -0.5 * std::log(2.0 * std::numbers::pi * s2);
    for (int j = 0; j < n; ++j) {
      const double r = ctx.y(j, l2) - mu(j, l2) - p.beta(l2);
      ll += norm - r * r / (2.0 * s2);
    }
  }
  const double lp = ll + detail::unconstrained_prior(x, ctx, nullptr);
  return std::isfinite(lp) ? lp : detail::kNegInf;
}

/// Log posterior with its exact gradient. The trajectory factor is
/// differentiated by a reverse sweep over the propagation recursion
/// x_{j+1} = Psi x_j, followed by one Frechet-adjoint matrix exponential
/// per distinct stimulus system:
///   dL/dM = r * L_exp((rM)^T, G),  G = sum_j lambda_{j+1} x_j^T,
/// whose entries map directly onto the free parameters.
inline double log_posterior_grad(const VectorXd& x, const FitContext& ctx,
                                 VectorXd& grad) {
  const ParamLayout& l = ctx.layout;
  grad = VectorXd::Zero(l.total);
  if (!all_finite(x)) return detail::kNegInf;
  const ParamSet p = unpack_params(x, ctx.h);

  const int n = ctx.design.n();
  const int d = ctx.h.d;
  const double r = ctx.design.r;
  const int nsys = static_cast<int>(ctx.ts.stimuli.size());

  // Forward pass: propagators and trajectory.
  std::vector<MatrixXd> aug_m(static_cast<std::size_t>(nsys));
  std::vector<MatrixXd> prop(static_cast<std::size_t>(nsys));  // (d+1)x(d+1)
  for (int s = 0; s < nsys; ++s) {
    auto [at, ct] = assemble_block_system(p, ctx.h, ctx.ts.stimuli[static_cast<std::size_t>(s)]);
    MatrixXd m = MatrixXd::Zero(d + 1, d + 1);
    m.topLeftCorner(d, d) = at;
    m.topRightCorner(d, 1) = ct;
    aug_m[static_cast<std::size_t>(s)] = m;
    prop[static_cast<std::size_t>(s)] = mat_exp(r * m);
    if (!all_finite(prop[static_cast<std::size_t>(s)])) return detail::kNegInf;
  }
  MatrixXd z(n, d);
  z.row(0) = p.s_star.transpose();
  for (int j = 0; j + 1 < n; ++j) {
    const auto& psi = prop[static_cast<std::size_t>(ctx.ts.of_transition[static_cast<std::size_t>(j)])];
    z.row(j + 1) = (psi.topLeftCorner(d, d) * z.row(j).transpose() +
                    psi.topRightCorner(d, 1))
                       .transpose();
  }
  if (!all_finite(z)) return detail::kNegInf;
  const MatrixXd mu = convolve(z, ctx.hker);

  // Likelihood, residual scaling, and the closed-form beta/sigma gradients.
  double ll = 0.0;
  MatrixXd dmu(n, d);  // dL/dmu
  for (int l2 = 0; l2 < d; ++l2) {
    const double s2 = p.sigma(l2) * p.sigma(l2);
    const double norm = -0.5 * std::log(2.0 * std::numbers::pi * s2);
    double rss = 0.0, rsum = 0.0;
    for (int j = 0; j < n; ++j) {
      const double res = ctx.y(j, l2) - mu(j, l2) - p.beta(l2);
      ll += norm - res * res / (2.0 * s2);
      dmu(j, l2) = res / s2;
      rss += res * res;
      rsum += res;
    }
    grad(l.off_beta + l2) += rsum / s2;
    grad(l.off_lsig + l2) += -n + rss / s2;
  }
  if (!std::isfinite(ll)) return detail::kNegInf;

  // dL/dz = H^T dL/dmu (correlation with the kernel).
  MatrixXd gz = MatrixXd::Zero(n, d);
  for (int j = 0; j < n; ++j)
    for (int k = j; k < n; ++k) gz.row(j) += ctx.hker(k + 1 - j) * dmu.row(k);

  // Reverse sweep over x_{j+1} = Psi_{s(j)} x_j with x_j = [z_j; 1].
  std::vector<MatrixXd> gpsi(static_cast<std::size_t>(nsys),
                             MatrixXd::Zero(d + 1, d + 1));
  VectorXd lam = VectorXd::Zero(d + 1);
  lam.head(d) = gz.row(n - 1).transpose();
  VectorXd xj(d + 1);
  for (int j = n - 2; j >= 0; --j) {
    const int s = ctx.ts.of_transition[static_cast<std::size_t>(j)];
    xj.head(d) = z.row(j).transpose();
    xj(d) = 1.0;
    gpsi[static_cast<std::size_t>(s)] += lam * xj.transpose();
    lam = prop[static_cast<std::size_t>(s)].transpose() * lam;
    lam.head(d) += gz.row(j).transpose();
  }
  grad.segment(l.off_s, d) += lam.head(d);

  // Contract each accumulated Psi-gradient against the parameter directions.
  for (int s = 0; s < nsys; ++s) {
    if (gpsi[static_cast<std::size_t>(s)].cwiseAbs().maxCoeff() == 0.0) continue;
    const MatrixXd k =
        mat_exp_frechet(r * aug_m[static_cast<std::size_t>(s)].transpose(),
                        gpsi[static_cast<std::size_t>(s)]);
    const VectorXi& u = ctx.ts.stimuli[static_cast<std::size_t>(s)];
    for (int i = 0; i < d; ++i)
      grad(l.off_nu + i) += r * k(i, i) * (-0.5 * std::exp(p.nu_diag_a(i)));
    for (int i = 0; i < l.na; ++i) {
      const auto& e = ctx.h.off_a[static_cast<std::size_t>(i)];
      grad(l.off_a + i) += r * k(e.row, e.col);
    }
    for (int i = 0; i < l.nb; ++i) {
      const auto& e = ctx.h.idx_b[static_cast<std::size_t>(i)];
      if (u(e.stim)) grad(l.off_b + i) += r * k(e.row, e.col);
    }
    for (int i = 0; i < l.nc; ++i) {
      const auto& e = ctx.h.idx_c[static_cast<std::size_t>(i)];
      if (u(e.stim)) grad(l.off_c + i) += r * k(e.row, d);
    }
  }

  const double lp = ll + detail::unconstrained_prior(x, ctx, &grad);
  if (!std::isfinite(lp) || !all_finite(grad)) {
    grad.setZero();
    return detail::kNegInf;
  }
  return lp;
}

}  // namespace cdcm
