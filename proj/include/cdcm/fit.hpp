#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "cdcm/diagnostics.hpp"
#include "cdcm/model.hpp"
#include "cdcm/nuts.hpp"
#include "cdcm/posterior.hpp"
#include "cdcm/rng.hpp"

namespace cdcm {

/// Prior draw on the unconstrained scale.
inline VectorXd draw_prior_unconstrained(const Hypothesis& h, Rng& rng) {
  const ParamLayout l = ParamLayout::of(h);
  VectorXd x(l.total);
  for (int i = 0; i < l.d; ++i) x(l.off_nu + i) = prior::sigma_nu_diag * rng.normal();
  for (int i = 0; i < l.na; ++i) x(l.off_a + i) = prior::sigma_nu_off * rng.normal();
  for (int i = 0; i < l.nb; ++i) {
    const auto& e = h.idx_b[static_cast<std::size_t>(i)];
    const double sd = e.row == e.col ? prior::sigma_nu_diag : prior::sigma_nu_off;
    x(l.off_b + i) = sd * rng.normal();
  }
  for (int i = 0; i < l.nc; ++i) x(l.off_c + i) = prior::sigma_nu_off * rng.normal();
  for (int i = 0; i < l.d; ++i) x(l.off_s + i) = prior::sigma_s * rng.normal();
  for (int i = 0; i < l.d; ++i) x(l.off_beta + i) = prior::sigma_beta * rng.normal();
  for (int i = 0; i < l.d; ++i)
    x(l.off_lsig + i) = std::log(rng.exponential(prior::sigma_rate));
  return x;
}

/// Initialization policy: best of `draws` prior draws by log posterior,
/// optionally refined by a short backtracking gradient ascent.
inline VectorXd choose_init(const FitContext& ctx, std::uint64_t seed, int chain,
                            int draws = 10, int refine_steps = 0) {
  Rng rng = Rng::stream(seed, 0x1417 + static_cast<std::uint64_t>(chain));
  VectorXd best;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < std::max(1, draws); ++i) {
    VectorXd x = draw_prior_unconstrained(ctx.h, rng);
    const double lp = log_posterior(x, ctx);
    if (lp > best_lp) {
      best_lp = lp;
      best = std::move(x);
    }
  }
  if (!std::isfinite(best_lp))
    throw initialization_error("choose_init: no finite prior draw found");

  VectorXd grad(ctx.layout.total);
  double lp = log_posterior_grad(best, ctx, grad);
  for (int s = 0; s < refine_steps; ++s) {
    double alpha = 1.0 / std::max(1.0, grad.cwiseAbs().maxCoeff());
    bool moved = false;
    for (int half = 0; half < 20; ++half) {
      VectorXd trial = best + alpha * grad;
      const double trial_lp = log_posterior(trial, ctx);
      if (trial_lp > lp) {
        best = std::move(trial);
        lp = log_posterior_grad(best, ctx, grad);
        moved = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!moved) break;
  }
  return best;
}

inline std::vector<NaturalTransform> natural_transforms(const Hypothesis& h) {
  std::vector<NaturalTransform> out;
  for (ParamKind k : param_kinds(h)) {
    switch (k) {
      case ParamKind::DiagNu: out.push_back(NaturalTransform::NegHalfExp); break;
      case ParamKind::LogSigma: out.push_back(NaturalTransform::Exp); break;
      default: out.push_back(NaturalTransform::None); break;
    }
  }
  return out;
}

struct FitOptions {
  SamplerConfig sampler;
  int init_draws = 10;
  int init_refine = 0;
};

struct FitResult {
  PosteriorDraws draws;
  DrawsSummary summary;
  MatrixXd predicted;  // BOLD curve at the posterior mean, n x d
};

/// Full single-subject fit: context, per-chain initialization, NUTS, and
/// summaries on both scales. The predicted curve evaluates the model at the
/// posterior mean of the unconstrained parameters.
inline FitResult fit_model(const Hypothesis& h, const StimulusDesign& design,
                           const MatrixXd& y, const FitOptions& opt) {
  const FitContext ctx = FitContext::make(h, design, y);
  LogDensityFn target = [&ctx](const VectorXd& x, VectorXd& grad) {
    return log_posterior_grad(x, ctx, grad);
  };

  std::vector<VectorXd> inits;
  for (int c = 0; c < opt.sampler.chains; ++c)
    inits.push_back(choose_init(ctx, opt.sampler.seed, c, opt.init_draws,
                                opt.init_refine));

  FitResult out;
  out.draws = nuts_sample(target, opt.sampler, inits, param_names(h));
  out.summary = summarize_draws(out.draws.draws, out.draws.names,
                                natural_transforms(h), ctx.layout.p_theta);

  VectorXd xbar = out.draws.draws.colwise().mean().transpose();
  const ParamSet pbar = unpack_params(xbar, h);
  const MatrixXd z = neural_trajectory(pbar, h, design);
  out.predicted = convolve(z, ctx.hker);
  out.predicted.rowwise() += pbar.beta.transpose();
  return out;
}

}  // namespace cdcm
