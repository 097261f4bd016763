#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cdcm/errors.hpp"
#include "cdcm/rng.hpp"

namespace cdcm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ============================================================================
// Multivariate effective sample size and the stopping threshold
// ============================================================================

namespace detail {

inline double logdet_spd(const MatrixXd& m, bool& ok) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(m);
  const VectorXd ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0) {
    ok = false;
    return 0.0;
  }
  ok = true;
  return ev.array().log().sum();
}

}  // namespace detail

/// multiESS = N (|Lambda| / |Sigma|)^{1/P} with Lambda the sample covariance
/// and Sigma the multivariate batch-means estimator at batch size
/// floor(sqrt(N)). Returns nullopt when not estimable (too few draws or
/// batches for a nonsingular Sigma).
inline std::optional<double> try_multi_ess(const MatrixXd& draws) {
  const Eigen::Index n = draws.rows();
  const Eigen::Index p = draws.cols();
  if (p < 1 || n <= 2 * p) return std::nullopt;

  const Eigen::Index b = static_cast<Eigen::Index>(std::floor(std::sqrt(double(n))));
  const Eigen::Index a = n / b;
  if (a <= p) return std::nullopt;
  const Eigen::Index used = a * b;

  const Eigen::RowVectorXd mean = draws.topRows(used).colwise().mean();
  MatrixXd centered = draws.topRows(used).rowwise() - mean;
  MatrixXd lambda = centered.transpose() * centered / double(used - 1);

  MatrixXd bm(a, p);
  for (Eigen::Index k = 0; k < a; ++k)
    bm.row(k) = centered.middleRows(k * b, b).colwise().mean();
  MatrixXd sigma = (double(b) / double(a - 1)) * (bm.transpose() * bm);

  bool ok1 = false, ok2 = false;
  const double ld_lambda = detail::logdet_spd(lambda, ok1);
  if (!ok1) throw degenerate_draws("multi_ess: singular sample covariance");
  const double ld_sigma = detail::logdet_spd(sigma, ok2);
  if (!ok2) return std::nullopt;

  return double(n) * std::exp((ld_lambda - ld_sigma) / double(p));
}

inline double multi_ess(const MatrixXd& draws) {
  if (draws.cols() >= 1 && draws.rows() <= 2 * draws.cols())
    throw invalid_input("multi_ess: need N > 2P draws");
  auto ess = try_multi_ess(draws);
  if (!ess) throw degenerate_draws("multi_ess: batch-means estimator not estimable");
  return *ess;
}

/// Minimum-ESS bound W(P, alpha, eps) =
///   2^{2/P} pi (P Gamma(P/2))^{-2/P} chi^2_{1-alpha,P} / eps^2.
inline double ess_threshold(int p, double alpha, double eps) {
  if (p < 1) throw invalid_input("ess_threshold: P must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw invalid_input("ess_threshold: alpha must be in (0, 1)");
  if (!(eps > 0.0)) throw invalid_input("ess_threshold: eps must be positive");
  const double pd = static_cast<double>(p);
  const boost::math::chi_squared chi(pd);
  const double q = boost::math::quantile(chi, 1.0 - alpha);
  const double log_pre = (2.0 / pd) * std::numbers::ln2 + std::log(std::numbers::pi) -
                         (2.0 / pd) * (std::log(pd) + std::lgamma(pd / 2.0));
  return std::exp(log_pre) * q / (eps * eps);
}

// ============================================================================
// Interval and fit diagnostics
// ============================================================================

/// Shortest interval containing ceil(prob * N) sorted draws.
inline std::pair<double, double> hpd_interval(const VectorXd& draws, double prob) {
  const Eigen::Index n = draws.size();
  if (n < 20) throw invalid_input("hpd_interval: need at least 20 draws");
  if (!(prob > 0.0 && prob < 1.0))
    throw invalid_input("hpd_interval: prob must be in (0, 1)");
  std::vector<double> v(draws.data(), draws.data() + n);
  std::sort(v.begin(), v.end());
  const Eigen::Index k =
      static_cast<Eigen::Index>(std::ceil(prob * static_cast<double>(n)));
  Eigen::Index best = 0;
  double best_w = v[static_cast<std::size_t>(k - 1)] - v[0];
  for (Eigen::Index i = 1; i + k <= n; ++i) {
    const double w = v[static_cast<std::size_t>(i + k - 1)] - v[static_cast<std::size_t>(i)];
    if (w < best_w) {
      best_w = w;
      best = i;
    }
  }
  return {v[static_cast<std::size_t>(best)], v[static_cast<std::size_t>(best + k - 1)]};
}

struct BootstrapMse {
  double mse = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

/// Circular moving-block bootstrap of the mean squared residual.
inline BootstrapMse block_bootstrap_mse(const VectorXd& obs, const VectorXd& pred,
                                        int block_len, int reps,
                                        std::uint64_t seed) {
  const int n = static_cast<int>(obs.size());
  if (pred.size() != n) throw invalid_input("block_bootstrap_mse: length mismatch");
  if (block_len < 1) throw invalid_input("block_bootstrap_mse: block_len must be >= 1");
  if (reps < 100) throw invalid_input("block_bootstrap_mse: need at least 100 replicates");
  if (n < block_len)
    throw invalid_input("block_bootstrap_mse: series shorter than block length");

  const VectorXd sq = (obs - pred).array().square();
  BootstrapMse out;
  out.mse = sq.mean();

  if (block_len >= n) {
    // A single circular block is a rotation of the whole series; every
    // replicate equals the plain MSE.
    out.se = 0.0;
    out.ci_lo = out.ci_hi = out.mse;
    return out;
  }

  Rng rng = Rng::stream(seed, 0x0b00);
  const int nblocks = (n + block_len - 1) / block_len;
  std::vector<double> boot(static_cast<std::size_t>(reps));
  for (int rep = 0; rep < reps; ++rep) {
    double acc = 0.0;
    int filled = 0;
    for (int b = 0; b < nblocks && filled < n; ++b) {
      const int start = static_cast<int>(rng.uniform_below(static_cast<std::uint64_t>(n)));
      for (int j = 0; j < block_len && filled < n; ++j, ++filled)
        acc += sq((start + j) % n);
    }
    boot[static_cast<std::size_t>(rep)] = acc / n;
  }
  const double bmean =
      std::accumulate(boot.begin(), boot.end(), 0.0) / static_cast<double>(reps);
  double var = 0.0;
  for (double v : boot) var += (v - bmean) * (v - bmean);
  out.se = std::sqrt(var / static_cast<double>(reps - 1));
  std::sort(boot.begin(), boot.end());
  auto pct = [&](double q) {
    const int idx = static_cast<int>(std::lround(q * (reps - 1)));
    return boot[static_cast<std::size_t>(std::clamp(idx, 0, reps - 1))];
  };
  out.ci_lo = pct(0.025);
  out.ci_hi = pct(0.975);
  return out;
}

// ============================================================================
// Posterior summaries
// ============================================================================

/// Natural-scale readout applied per draw before summarizing.
enum class NaturalTransform { None, NegHalfExp, Exp };

struct ParamSummary {
  std::string name;
  double mean = 0, sd = 0, hpd_lo = 0, hpd_hi = 0;
  std::string natural_name;
  double nat_mean = 0, nat_sd = 0, nat_lo = 0, nat_hi = 0;
};

struct DrawsSummary {
  std::vector<ParamSummary> params;
  VectorXd theta_hat;  // posterior means of the leading p_theta block
  MatrixXd s_within;   // covariance of that block (model scale)
};

/// Componentwise summaries on the sampling scale and, per draw, on the
/// natural scale (mean of the transform, never transform of the mean).
inline DrawsSummary summarize_draws(const MatrixXd& draws,
                                    const std::vector<std::string>& names,
                                    const std::vector<NaturalTransform>& transforms,
                                    int p_theta) {
  const Eigen::Index n = draws.rows();
  const Eigen::Index p = draws.cols();
  if (static_cast<Eigen::Index>(names.size()) != p ||
      static_cast<Eigen::Index>(transforms.size()) != p)
    throw invalid_input("summarize_draws: names/transforms length mismatch");
  if (n < 1) throw invalid_input("summarize_draws: no draws");
  if (p_theta < 0 || p_theta > p) throw invalid_input("summarize_draws: bad p_theta");

  DrawsSummary out;
  for (Eigen::Index j = 0; j < p; ++j) {
    ParamSummary ps;
    ps.name = names[static_cast<std::size_t>(j)];
    VectorXd col = draws.col(j);
    ps.mean = col.mean();
    ps.sd = n > 1 ? std::sqrt((col.array() - ps.mean).square().sum() / double(n - 1)) : 0.0;
    if (n >= 20) {
      auto [lo, hi] = hpd_interval(col, 0.95);
      ps.hpd_lo = lo;
      ps.hpd_hi = hi;
    } else {
      ps.hpd_lo = ps.hpd_hi = ps.mean;
    }

    VectorXd nat = col;
    ps.natural_name = ps.name;
    switch (transforms[static_cast<std::size_t>(j)]) {
      case NaturalTransform::None:
        break;
      case NaturalTransform::NegHalfExp:
        nat = -0.5 * col.array().exp();
        ps.natural_name = "a_diag" + ps.name.substr(ps.name.rfind('_'));
        break;
      case NaturalTransform::Exp:
        nat = col.array().exp();
        if (ps.name.rfind("log_", 0) == 0) ps.natural_name = ps.name.substr(4);
        break;
    }
    ps.nat_mean = nat.mean();
    ps.nat_sd =
        n > 1 ? std::sqrt((nat.array() - ps.nat_mean).square().sum() / double(n - 1)) : 0.0;
    if (n >= 20) {
      auto [lo, hi] = hpd_interval(nat, 0.95);
      ps.nat_lo = lo;
      ps.nat_hi = hi;
    } else {
      ps.nat_lo = ps.nat_hi = ps.nat_mean;
    }
    out.params.push_back(std::move(ps));
  }

  out.theta_hat = draws.leftCols(p_theta).colwise().mean().transpose();
  MatrixXd centered = draws.leftCols(p_theta).rowwise() -
                      draws.leftCols(p_theta).colwise().mean();
  out.s_within = n > 1 ? MatrixXd(centered.transpose() * centered / double(n - 1))
                       : MatrixXd(MatrixXd::Zero(p_theta, p_theta));
  return out;
}

}  // namespace cdcm
