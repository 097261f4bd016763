#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "cdcm/errors.hpp"
#include "cdcm/nuts.hpp"

namespace cdcm {

// ============================================================================
// Group-level marginalized hierarchical model
// ============================================================================
// theta_hat_k ~ N(alpha + Theta b_k, T + S_k) with T = diag(tau) Lc Lc^T
// diag(tau). Priors: alpha, vec(Theta) ~ N(0, I); tau ~ half-normal(0, 1);
// L_corr ~ LKJ(2). The density is evaluated with forward-mode duals so the
// same NUTS engine drives both the subject and the group model.

struct SubjectRecord {
  VectorXd theta_hat;  // p
  MatrixXd s;          // p x p PSD within-subject covariance
  VectorXd b;          // q covariates (possibly empty)
};

struct GroupParams {
  VectorXd alpha;    // p
  MatrixXd theta;    // p x q
  VectorXd tau;      // p, positive
  MatrixXd l_corr;   // p x p lower-triangular correlation Cholesky factor
};

namespace group_detail {

inline constexpr double kJitter = 1e-8;

// --------------------------------------------------------------------------
// Forward-mode dual scalar carrying the full gradient vector.
// --------------------------------------------------------------------------
struct Dual {
  double v = 0.0;
  VectorXd g;

  Dual() = default;
  Dual(double value, Eigen::Index n) : v(value), g(VectorXd::Zero(n)) {}
  static Dual seeded(double value, Eigen::Index n, Eigen::Index i) {
    Dual d(value, n);
    d.g(i) = 1.0;
    return d;
  }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    g += o.g;
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    g -= o.g;
    return *this;
  }
};

inline Dual operator+(Dual a, const Dual& b) { return a += b; }
inline Dual operator-(Dual a, const Dual& b) { return a -= b; }
inline Dual operator-(const Dual& a) {
  Dual r = a;
  r.v = -r.v;
  r.g = -r.g;
  return r;
}
inline Dual operator*(const Dual& a, const Dual& b) {
  Dual r(a.v * b.v, a.g.size());
  r.g = a.v * b.g + b.v * a.g;
  return r;
}
inline Dual operator*(double s, const Dual& a) {
  Dual r = a;
  r.v *= s;
  r.g *= s;
  return r;
}
inline Dual operator*(const Dual& a, double s) { return s * a; }
inline Dual operator+(const Dual& a, double s) {
  Dual r = a;
  r.v += s;
  return r;
}
inline Dual operator+(double s, const Dual& a) { return a + s; }
inline Dual operator-(const Dual& a, double s) { return a + (-s); }
inline Dual operator-(double s, const Dual& a) {
  Dual r = -a;
  r.v += s;
  return r;
}
inline Dual operator/(const Dual& a, const Dual& b) {
  Dual r(a.v / b.v, a.g.size());
  r.g = (a.g - r.v * b.g) / b.v;
  return r;
}
inline Dual exp(const Dual& a) {
  Dual r(std::exp(a.v), a.g.size());
  r.g = r.v * a.g;
  return r;
}
inline Dual log(const Dual& a) {
  Dual r(std::log(a.v), a.g.size());
  r.g = a.g / a.v;
  return r;
}
inline Dual sqrt(const Dual& a) {
  Dual r(std::sqrt(a.v), a.g.size());
  r.g = a.g / (2.0 * r.v);
  return r;
}
inline Dual tanh(const Dual& a) {
  Dual r(std::tanh(a.v), a.g.size());
  r.g = (1.0 - r.v * r.v) * a.g;
  return r;
}

using DualMat = std::vector<std::vector<Dual>>;

struct Layout {
  int p = 0, q = 0;
  int off_alpha = 0, off_theta = 0, off_tau = 0, off_corr = 0, total = 0;
  static Layout of(int p, int q) {
    Layout l;
    l.p = p;
    l.q = q;
    l.off_alpha = 0;
    l.off_theta = p;
    l.off_tau = l.off_theta + p * q;
    l.off_corr = l.off_tau + p;
    l.total = l.off_corr + p * (p - 1) / 2;
    return l;
  }
};

/// Canonical partial-correlation build of L_corr from tanh-mapped entries.
/// Accumulates the transform log-Jacobian into `jac`.
inline DualMat build_lcorr(const std::vector<Dual>& z, int p, Eigen::Index n,
                           Dual& jac) {
  DualMat l(static_cast<std::size_t>(p),
             std::vector<Dual>(static_cast<std::size_t>(p), Dual(0.0, n)));
  l[0][0] = Dual(1.0, n);
  int k = 0;
  for (int i = 1; i < p; ++i) {
    Dual sumsq(0.0, n);
    for (int j = 0; j < i; ++j) {
      const Dual one_minus = 1.0 - sumsq;
      l[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          z[static_cast<std::size_t>(k)] * sqrt(one_minus);
      jac += 0.5 * log(one_minus);
      sumsq += l[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
               l[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      ++k;
    }
    l[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = sqrt(1.0 - sumsq);
  }
  return l;
}

}  // namespace group_detail

// ============================================================================
// Covariate encoding
// ============================================================================

struct CovariateTable {
  std::vector<std::string> names;                  // column names
  std::vector<std::vector<std::string>> cells;     // cells[row][col]
};

struct EncodedCovariates {
  MatrixXd x;                       // rows x encoded columns
  std::vector<std::string> labels;  // one per encoded column
};

/// Continuous columns are standardized to mean 0, SD 1; categorical columns
/// are effect-coded (levels sum to zero, levels ordered lexicographically).
inline EncodedCovariates encode_covariates(const CovariateTable& table) {
  const int rows = static_cast<int>(table.cells.size());
  const int cols = static_cast<int>(table.names.size());
  if (rows < 2) throw invalid_input("encode_covariates: need at least two rows");
  for (int i = 0; i < rows; ++i) {
    if (static_cast<int>(table.cells[static_cast<std::size_t>(i)].size()) != cols)
      throw invalid_input("encode_covariates: ragged table at row " + std::to_string(i + 1));
    for (int j = 0; j < cols; ++j)
      if (table.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].empty())
        throw invalid_input("encode_covariates: missing cell at row " +
                            std::to_string(i + 1));
  }

  std::vector<VectorXd> out_cols;
  std::vector<std::string> labels;
  for (int j = 0; j < cols; ++j) {
    std::vector<double> numeric(static_cast<std::size_t>(rows));
    bool is_numeric = true;
    for (int i = 0; i < rows && is_numeric; ++i) {
      const std::string& cell = table.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      char* end = nullptr;
      numeric[static_cast<std::size_t>(i)] = std::strtod(cell.c_str(), &end);
      is_numeric = end != cell.c_str() && *end == '\0';
    }
    if (is_numeric) {
      Eigen::Map<VectorXd> v(numeric.data(), rows);
      const double mean = v.mean();
      const double sd = std::sqrt((v.array() - mean).square().sum() / (rows - 1));
      if (!(sd > 0.0))
        throw zero_variance_covariate("encode_covariates: constant column '" +
                                      table.names[static_cast<std::size_t>(j)] + "'");
      out_cols.push_back((v.array() - mean) / sd);
      labels.push_back(table.names[static_cast<std::size_t>(j)]);
    } else {
      std::vector<std::string> levels;
      for (int i = 0; i < rows; ++i) {
        const auto& cell = table.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        if (std::find(levels.begin(), levels.end(), cell) == levels.end())
          levels.push_back(cell);
      }
      std::sort(levels.begin(), levels.end());
      const int nlev = static_cast<int>(levels.size());
      if (nlev < 2)
        throw zero_variance_covariate("encode_covariates: constant column '" +
                                      table.names[static_cast<std::size_t>(j)] + "'");
      for (int lv = 0; lv + 1 < nlev; ++lv) {
        VectorXd col = VectorXd::Zero(rows);
        for (int i = 0; i < rows; ++i) {
          const auto& cell = table.cells[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
          const int li = static_cast<int>(
              std::find(levels.begin(), levels.end(), cell) - levels.begin());
          if (li == lv) col(i) = 1.0;
          if (li == nlev - 1) col(i) = -1.0;
        }
        out_cols.push_back(col);
        labels.push_back(table.names[static_cast<std::size_t>(j)] + "=" +
                         levels[static_cast<std::size_t>(lv)]);
      }
    }
  }

  EncodedCovariates enc;
  enc.x.resize(rows, static_cast<Eigen::Index>(out_cols.size()));
  for (std::size_t c = 0; c < out_cols.size(); ++c) enc.x.col(static_cast<Eigen::Index>(c)) = out_cols[c];
  enc.labels = std::move(labels);
  return enc;
}

// ============================================================================
// Marginal likelihood (plain-double path)
// ============================================================================

inline double group_marginal_loglik(const std::vector<SubjectRecord>& records,
                                    const GroupParams& g) {
  const int p = static_cast<int>(g.alpha.size());
  MatrixXd t = g.tau.asDiagonal() * g.l_corr * g.l_corr.transpose() *
               g.tau.asDiagonal();
  double ll = 0.0;
  for (const auto& rec : records) {
    if (rec.theta_hat.size() != p || rec.s.rows() != p || rec.s.cols() != p)
      throw invalid_input("group_marginal_loglik: dimension mismatch");
    MatrixXd cov = t + rec.s + group_detail::kJitter * MatrixXd::Identity(p, p);
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      throw degenerate_covariance("group_marginal_loglik: T + S_k not positive definite");
    VectorXd resid = rec.theta_hat - g.alpha;
    if (g.theta.size() > 0) resid -= g.theta * rec.b;
    const VectorXd w = llt.matrixL().solve(resid);
    double logdet = 0.0;
    for (int i = 0; i < p; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
    ll += -0.5 * (p * std::log(2.0 * std::numbers::pi) + logdet + w.squaredNorm());
  }
  return ll;
}

// ============================================================================
// Group posterior over the unconstrained parameterization
// ============================================================================

namespace group_detail {

/// Log posterior with gradient by forward-mode duals. Unconstrained layout:
/// [alpha | vec(Theta) row-major | log tau | corr y].
inline double group_log_posterior_grad(const VectorXd& x,
                                       const std::vector<SubjectRecord>& records,
                                       int p, int q, VectorXd& grad) {
  const Layout l = Layout::of(p, q);
  const Eigen::Index n = l.total;
  grad = VectorXd::Zero(n);
  if (!x.allFinite()) return -std::numeric_limits<double>::infinity();

  auto var = [&](int i) { return Dual::seeded(x(i), n, i); };

  Dual lp(0.0, n);

  // Priors on alpha and Theta: standard normal.
  std::vector<Dual> alpha;
  for (int i = 0; i < p; ++i) {
    alpha.push_back(var(l.off_alpha + i));
    lp -= 0.5 * (alpha.back() * alpha.back());
  }
  std::vector<std::vector<Dual>> theta(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) {
      theta[static_cast<std::size_t>(i)].push_back(var(l.off_theta + i * q + j));
      const Dual& t = theta[static_cast<std::size_t>(i)].back();
      lp -= 0.5 * (t * t);
    }

  // Half-normal tau via tau = exp(x); prior -tau^2/2 plus log-Jacobian x.
  std::vector<Dual> tau;
  for (int i = 0; i < p; ++i) {
    Dual t = exp(var(l.off_tau + i));
    lp -= 0.5 * (t * t);
    lp += Dual::seeded(x(l.off_tau + i), n, l.off_tau + i);
    tau.push_back(std::move(t));
  }

  // Correlation Cholesky factor via canonical partial correlations.
  std::vector<Dual> z;
  Dual jac(0.0, n);
  for (int k = 0; k < p * (p - 1) / 2; ++k) {
    Dual y = var(l.off_corr + k);
    Dual zk = tanh(y);
    jac += log(1.0 - zk * zk);  // dz/dy
    z.push_back(std::move(zk));
  }
  auto lcorr = build_lcorr(z, p, n, jac);
  lp += jac;
  // LKJ(2): sum over rows of (p - i + 2 eta - 2) log L_ii, 1-based i.
  constexpr double eta = 2.0;
  for (int i = 1; i < p; ++i)
    lp += (p - (i + 1) + 2.0 * eta - 2.0) * log(lcorr[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]);

  // L_tau = diag(tau) L_corr, so T = L_tau L_tau^T.
  DualMat ltau(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) {
    ltau[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(p), Dual(0.0, n));
    for (int j = 0; j <= i; ++j)
      ltau[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          tau[static_cast<std::size_t>(i)] * lcorr[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  DualMat tmat(static_cast<std::size_t>(p));
  for (int i = 0; i < p; ++i) {
    tmat[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(p), Dual(0.0, n));
    for (int j = 0; j <= i; ++j) {
      Dual acc(0.0, n);
      for (int k = 0; k <= std::min(i, j); ++k)
        acc += ltau[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] *
               ltau[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
      tmat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = acc;
      tmat[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = acc;
    }
  }

  // Marginal likelihood per subject: Cholesky of T + S_k in dual arithmetic.
  const double log2pi = std::log(2.0 * std::numbers::pi);
  for (const auto& rec : records) {
    DualMat c(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) {
      c[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(p), Dual(0.0, n));
      for (int j = 0; j <= i; ++j) {
        c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            tmat[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] +
            (rec.s(i, j) + (i == j ? kJitter : 0.0));
      }
    }
    // In-place lower Cholesky.
    for (int i = 0; i < p; ++i) {
      for (int j = 0; j < i; ++j) {
        Dual acc = c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        for (int k = 0; k < j; ++k)
          acc -= c[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] *
                 c[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)];
        c[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
            acc / c[static_cast<std::size_t>(j)][static_cast<std::size_t>(j)];
      }
      Dual acc = c[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
      for (int k = 0; k < i; ++k)
        acc -= c[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] *
               c[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
      if (!(acc.v > 0.0)) return -std::numeric_limits<double>::infinity();
      c[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)] = sqrt(acc);
    }
    // Residual and forward solve.
    std::vector<Dual> resid;
    for (int i = 0; i < p; ++i) {
      Dual ri = Dual(rec.theta_hat(i), n) - alpha[static_cast<std::size_t>(i)];
      for (int j = 0; j < q; ++j)
        ri -= rec.b(j) * theta[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      resid.push_back(std::move(ri));
    }
    Dual quad(0.0, n);
    Dual logdet(0.0, n);
    for (int i = 0; i < p; ++i) {
      Dual w = resid[static_cast<std::size_t>(i)];
      for (int k = 0; k < i; ++k)
        w -= c[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] * resid[static_cast<std::size_t>(k)];
      w = w / c[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
      resid[static_cast<std::size_t>(i)] = w;  // reuse as the whitened residual
      quad += w * w;
      logdet += 2.0 * log(c[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)]);
    }
    lp -= 0.5 * (quad + logdet);
    lp = lp - 0.5 * p * log2pi;
  }

  if (!std::isfinite(lp.v) || !lp.g.allFinite()) {
    grad.setZero();
    return -std::numeric_limits<double>::infinity();
  }
  grad = lp.g;
  return lp.v;
}

}  // namespace group_detail

inline std::vector<std::string> group_param_names(int p, int q,
                                                  const std::vector<std::string>& cov_labels = {}) {
  std::vector<std::string> names;
  for (int i = 0; i < p; ++i) names.push_back("alpha_" + std::to_string(i + 1));
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) {
      const std::string cov = j < static_cast<int>(cov_labels.size())
                                  ? cov_labels[static_cast<std::size_t>(j)]
                                  : std::to_string(j + 1);
      names.push_back("Theta_" + std::to_string(i + 1) + "_" + cov);
    }
  for (int i = 0; i < p; ++i) names.push_back("log_tau_" + std::to_string(i + 1));
  for (int k = 0; k < p * (p - 1) / 2; ++k)
    names.push_back("corr_y_" + std::to_string(k + 1));
  return names;
}

inline std::vector<NaturalTransform> group_natural_transforms(int p, int q) {
  const group_detail::Layout l = group_detail::Layout::of(p, q);
  std::vector<NaturalTransform> t(static_cast<std::size_t>(l.total), NaturalTransform::None);
  for (int i = 0; i < p; ++i)
    t[static_cast<std::size_t>(l.off_tau + i)] = NaturalTransform::Exp;
  return t;
}

/// Extracts GroupParams from an unconstrained point (for tests and reporting).
inline GroupParams group_unpack(const VectorXd& x, int p, int q) {
  const group_detail::Layout l = group_detail::Layout::of(p, q);
  if (x.size() != l.total) throw invalid_input("group_unpack: wrong dimension");
  GroupParams g;
  g.alpha = x.segment(l.off_alpha, p);
  g.theta.resize(p, q);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < q; ++j) g.theta(i, j) = x(l.off_theta + i * q + j);
  g.tau = x.segment(l.off_tau, p).array().exp();
  g.l_corr = MatrixXd::Zero(p, p);
  g.l_corr(0, 0) = 1.0;
  int k = 0;
  for (int i = 1; i < p; ++i) {
    double sumsq = 0.0;
    for (int j = 0; j < i; ++j) {
      const double z = std::tanh(x(l.off_corr + k++));
      g.l_corr(i, j) = z * std::sqrt(1.0 - sumsq);
      sumsq += g.l_corr(i, j) * g.l_corr(i, j);
    }
    g.l_corr(i, i) = std::sqrt(1.0 - sumsq);
  }
  return g;
}

struct GroupFitResult {
  PosteriorDraws draws;
  DrawsSummary summary;
  int p = 0, q = 0;
};

/// NUTS over the marginalized group model.
inline GroupFitResult group_fit(const std::vector<SubjectRecord>& records,
                                const SamplerConfig& cfg,
                                const std::vector<std::string>& cov_labels = {}) {
  if (records.size() < 2) throw invalid_input("group_fit: need at least two subjects");
  const int p = static_cast<int>(records[0].theta_hat.size());
  const int q = static_cast<int>(records[0].b.size());
  for (const auto& rec : records)
    if (rec.theta_hat.size() != p || rec.b.size() != q || rec.s.rows() != p ||
        rec.s.cols() != p)
      throw invalid_input("group_fit: inconsistent record dimensions");

  const group_detail::Layout l = group_detail::Layout::of(p, q);
  LogDensityFn target = [&records, p, q](const VectorXd& x, VectorXd& grad) {
    return group_detail::group_log_posterior_grad(x, records, p, q, grad);
  };

  // Neutral start: alpha = Theta = 0, tau = 1, identity correlation.
  VectorXd init = VectorXd::Zero(l.total);

  GroupFitResult out;
  out.p = p;
  out.q = q;
  out.draws = nuts_sample(target, cfg, init, group_param_names(p, q, cov_labels));
  out.summary = summarize_draws(out.draws.draws, out.draws.names,
                                group_natural_transforms(p, q), p);
  return out;
}

}  // namespace cdcm
