#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "cdcm/errors.hpp"
#include "cdcm/hrf.hpp"
#include "cdcm/linalg.hpp"

namespace cdcm {

using Eigen::MatrixXi;
using Eigen::VectorXi;

using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// ============================================================================
// Domain types
// ============================================================================

/// Sparsity hypothesis: which entries of A, B_i, C are free parameters.
/// The diagonal of A is always free (it carries the reparameterized
/// self-loops).
struct Hypothesis {
  int d = 0;
  int m = 0;
  BoolMat mask_a;               // d x d
  std::vector<BoolMat> mask_b;  // m matrices, d x d
  BoolMat mask_c;               // d x m

  struct EntryA {
    int row, col;
  };
  struct EntryB {
    int stim, row, col;
  };
  struct EntryC {
    int row, stim;
  };

  // Row-major index maps over the free entries, fixed at validation time.
  std::vector<EntryA> off_a;
  std::vector<EntryB> idx_b;
  std::vector<EntryC> idx_c;

  int p_theta() const {
    return d + static_cast<int>(off_a.size() + idx_b.size() + idx_c.size());
  }

  void validate() {
    if (d < 1 || m < 1) throw invalid_input("Hypothesis: d and m must be >= 1");
    if (mask_a.rows() != d || mask_a.cols() != d)
      throw invalid_input("Hypothesis: mask_A must be d x d");
    if (static_cast<int>(mask_b.size()) != m)
      throw invalid_input("Hypothesis: mask_B must have m matrices");
    for (const auto& mb : mask_b)
      if (mb.rows() != d || mb.cols() != d)
        throw invalid_input("Hypothesis: mask_B entries must be d x d");
    if (mask_c.rows() != d || mask_c.cols() != m)
      throw invalid_input("Hypothesis: mask_C must be d x m");
    for (int i = 0; i < d; ++i)
      if (!mask_a(i, i))
        throw invalid_input("Hypothesis: diagonal of mask_A must be all true");

    off_a.clear();
    idx_b.clear();
    idx_c.clear();
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j)
        if (i != j && mask_a(i, j)) off_a.push_back({i, j});
    for (int s = 0; s < m; ++s)
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
          if (mask_b[s](i, j)) idx_b.push_back({s, i, j});
    for (int i = 0; i < d; ++i)
      for (int s = 0; s < m; ++s)
        if (mask_c(i, s)) idx_c.push_back({i, s});

    if (p_theta() < d) throw invalid_input("Hypothesis: too few free parameters");
  }
};

/// Binary stimulus design with its derived block partition. Block b covers a
/// maximal run of identical rows of U; row j acts on the time interval
/// [r j, r (j+1)). With prescan_rest, the interval [0, r) is forced to rest
/// regardless of row 0.
struct StimulusDesign {
  MatrixXi u;  // n x m, entries in {0, 1}
  double r = 0.0;
  bool prescan_rest = true;

  struct Block {
    int start = 0;  // first row index
    int len = 0;    // number of rows
    VectorXi stim;  // shared stimulus vector
  };
  std::vector<Block> blocks;

  int n() const { return static_cast<int>(u.rows()); }
  int m() const { return static_cast<int>(u.cols()); }
};

inline StimulusDesign block_partition(const MatrixXi& u, double r,
                                      bool prescan_rest = true) {
  if (u.rows() < 1 || u.cols() < 1)
    throw invalid_input("block_partition: empty stimulus matrix");
  if (!(r > 0.0)) throw invalid_input("block_partition: r must be positive");
  for (Eigen::Index i = 0; i < u.rows(); ++i)
    for (Eigen::Index j = 0; j < u.cols(); ++j)
      if (u(i, j) != 0 && u(i, j) != 1)
        throw invalid_input("block_partition: non-binary entry at row " +
                            std::to_string(i));

  StimulusDesign design;
  design.u = u;
  design.r = r;
  design.prescan_rest = prescan_rest;
  int start = 0;
  for (int i = 1; i <= u.rows(); ++i) {
    if (i == u.rows() || u.row(i) != u.row(start)) {
      design.blocks.push_back({start, i - start, u.row(start).transpose()});
      start = i;
    }
  }
  return design;
}

/// Full parameter state. diag(A) lives on the unconstrained scale nu with
/// diag(A) = -0.5 exp(nu), which keeps every self-loop strictly negative.
struct ParamSet {
  VectorXd nu_diag_a;  // d
  VectorXd offdiag_a;  // |off_a|, ordered as Hypothesis::off_a
  VectorXd b_entries;  // |idx_b|
  VectorXd c_entries;  // |idx_c|
  VectorXd s_star;     // d
  VectorXd beta;       // d
  VectorXd sigma;      // d, noise SD

  static ParamSet zero(const Hypothesis& h) {
    ParamSet p;
    p.nu_diag_a = VectorXd::Zero(h.d);
    p.offdiag_a = VectorXd::Zero(static_cast<Eigen::Index>(h.off_a.size()));
    p.b_entries = VectorXd::Zero(static_cast<Eigen::Index>(h.idx_b.size()));
    p.c_entries = VectorXd::Zero(static_cast<Eigen::Index>(h.idx_c.size()));
    p.s_star = VectorXd::Zero(h.d);
    p.beta = VectorXd::Zero(h.d);
    p.sigma = VectorXd::Ones(h.d);
    return p;
  }
};

// ============================================================================
// Assembly
// ============================================================================

inline MatrixXd assemble_a(const ParamSet& p, const Hypothesis& h) {
  MatrixXd a = MatrixXd::Zero(h.d, h.d);
  for (int i = 0; i < h.d; ++i) a(i, i) = -0.5 * std::exp(p.nu_diag_a(i));
  for (std::size_t k = 0; k < h.off_a.size(); ++k)
    a(h.off_a[k].row, h.off_a[k].col) = p.offdiag_a(static_cast<Eigen::Index>(k));
  return a;
}

inline MatrixXd assemble_b(const ParamSet& p, const Hypothesis& h, int stim) {
  MatrixXd b = MatrixXd::Zero(h.d, h.d);
  for (std::size_t k = 0; k < h.idx_b.size(); ++k)
    if (h.idx_b[k].stim == stim)
      b(h.idx_b[k].row, h.idx_b[k].col) = p.b_entries(static_cast<Eigen::Index>(k));
  return b;
}

inline MatrixXd assemble_c(const ParamSet& p, const Hypothesis& h) {
  MatrixXd c = MatrixXd::Zero(h.d, h.m);
  for (std::size_t k = 0; k < h.idx_c.size(); ++k)
    c(h.idx_c[k].row, h.idx_c[k].stim) = p.c_entries(static_cast<Eigen::Index>(k));
  return c;
}

/// Block system (A~, c~) = (A + sum_i u_i B_i, C u) for one stimulus vector.
inline std::pair<MatrixXd, VectorXd> assemble_block_system(const ParamSet& p,
                                                           const Hypothesis& h,
                                                           const VectorXi& u_b) {
  if (u_b.size() != h.m)
    throw invalid_input("assemble_block_system: stimulus dimension mismatch");
  for (int i = 0; i < h.m; ++i)
    if (u_b(i) != 0 && u_b(i) != 1)
      throw invalid_input("assemble_block_system: non-binary stimulus");

  MatrixXd at = assemble_a(p, h);
  for (std::size_t k = 0; k < h.idx_b.size(); ++k) {
    const auto& e = h.idx_b[k];
    if (u_b(e.stim)) at(e.row, e.col) += p.b_entries(static_cast<Eigen::Index>(k));
  }
  VectorXd ct = VectorXd::Zero(h.d);
  for (std::size_t k = 0; k < h.idx_c.size(); ++k) {
    const auto& e = h.idx_c[k];
    if (u_b(e.stim)) ct(e.row) += p.c_entries(static_cast<Eigen::Index>(k));
  }
  return {std::move(at), std::move(ct)};
}

// ============================================================================
// Latent trajectory
// ============================================================================

/// Distinct stimulus systems across the design plus the per-transition map.
/// Transition j propagates z(t_j) -> z(t_{j+1}); transition 0 is forced to
/// rest when prescan_rest is set.
struct TransitionSystems {
  std::vector<VectorXi> stimuli;    // distinct stimulus vectors
  std::vector<int> of_transition;   // size n-1
};

inline TransitionSystems transition_systems(const StimulusDesign& design) {
  TransitionSystems ts;
  const int n = design.n();
  ts.of_transition.resize(n > 0 ? n - 1 : 0);
  auto intern = [&ts](const VectorXi& u) {
    for (std::size_t k = 0; k < ts.stimuli.size(); ++k)
      if (ts.stimuli[k] == u) return static_cast<int>(k);
    ts.stimuli.push_back(u);
    return static_cast<int>(ts.stimuli.size() - 1);
  };
  for (int j = 0; j + 1 < n; ++j) {
    VectorXi u = design.u.row(j).transpose();
    if (j == 0 && design.prescan_rest) u.setZero();
    ts.of_transition[j] = intern(u);
  }
  return ts;
}

/// z(t_j) for j = 0..n-1 by exact affine propagation: one augmented matrix
/// exponential per distinct stimulus system, then a mat-vec sweep.
inline MatrixXd neural_trajectory(const ParamSet& p, const Hypothesis& h,
                                  const StimulusDesign& design) {
  const int n = design.n();
  const int d = h.d;
  if (p.s_star.size() != d)
    throw invalid_input("neural_trajectory: s_star dimension mismatch");

  const TransitionSystems ts = transition_systems(design);
  std::vector<MatrixXd> prop_e;
  std::vector<VectorXd> prop_p;
  prop_e.reserve(ts.stimuli.size());
  prop_p.reserve(ts.stimuli.size());
  for (const auto& u : ts.stimuli) {
    auto [at, ct] = assemble_block_system(p, h, u);
    auto [e, pv] = affine_propagator(at, ct, design.r);
    prop_e.push_back(std::move(e));
    prop_p.push_back(std::move(pv));
  }

  MatrixXd z(n, d);
  z.row(0) = p.s_star.transpose();
  for (int j = 0; j + 1 < n; ++j) {
    const int s = ts.of_transition[j];
    z.row(j + 1) = (prop_e[s] * z.row(j).transpose() + prop_p[s]).transpose();
  }
  return z;
}

// ============================================================================
// Observation model
// ============================================================================

/// Discrete convolution mu[j] = sum_{i=0..j} h[i] z[j-i] for j = 1..n.
/// Row k of the result corresponds to observation time t_{k+1}; the kernel
/// must therefore cover indices 0..n. Since h[0] = 0, row k uses z rows
/// 0..k only (the lower-triangular Toeplitz form H z).
inline MatrixXd convolve(const MatrixXd& z, const VectorXd& hker) {
  const Eigen::Index n = z.rows();
  if (hker.size() < n + 1)
    throw invalid_input("convolve: kernel shorter than n + 1 samples");
  MatrixXd mu = MatrixXd::Zero(n, z.cols());
  for (Eigen::Index k = 0; k < n; ++k)
    for (Eigen::Index j = 0; j <= k; ++j) mu.row(k) += hker(k + 1 - j) * z.row(j);
  return mu;
}

// ============================================================================
// Densities
// ============================================================================

namespace prior {
inline constexpr double sigma_nu_diag = 0.125;  // diag(A) reparam and diag(B)
inline constexpr double sigma_nu_off = 1.0;     // off-diagonal A/B and C
inline constexpr double sigma_s = 0.3;          // initial state
inline constexpr double sigma_beta = 1.0;
inline constexpr double sigma_rate = 0.5;       // Exponential rate on each SD
}  // namespace prior

inline double normal_lpdf(double x, double sd) {
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) -
         x * x / (2.0 * sd * sd);
}

inline double log_prior(const ParamSet& p, const Hypothesis& h) {
  for (int l = 0; l < h.d; ++l)
    if (!(p.sigma(l) > 0.0)) return -std::numeric_limits<double>::infinity();

  double lp = 0.0;
  for (int l = 0; l < h.d; ++l) lp += normal_lpdf(p.nu_diag_a(l), prior::sigma_nu_diag);
  for (Eigen::Index k = 0; k < p.offdiag_a.size(); ++k)
    lp += normal_lpdf(p.offdiag_a(k), prior::sigma_nu_off);
  for (std::size_t k = 0; k < h.idx_b.size(); ++k) {
    const double sd = h.idx_b[k].row == h.idx_b[k].col ? prior::sigma_nu_diag
                                                       : prior::sigma_nu_off;
    lp += normal_lpdf(p.b_entries(static_cast<Eigen::Index>(k)), sd);
  }
  for (Eigen::Index k = 0; k < p.c_entries.size(); ++k)
    lp += normal_lpdf(p.c_entries(k), prior::sigma_nu_off);
  for (int l = 0; l < h.d; ++l) lp += normal_lpdf(p.s_star(l), prior::sigma_s);
  for (int l = 0; l < h.d; ++l) lp += normal_lpdf(p.beta(l), prior::sigma_beta);
  for (int l = 0; l < h.d; ++l)
    lp += std::log(prior::sigma_rate) - prior::sigma_rate * p.sigma(l);
  return lp;
}

inline double log_likelihood(const ParamSet& p, const Hypothesis& h,
                             const StimulusDesign& design, const MatrixXd& y) {
  if (y.rows() != design.n() || y.cols() != h.d)
    throw invalid_input("log_likelihood: data dimension mismatch");
  if (!all_finite(y)) throw invalid_input("log_likelihood: non-finite data");

  const MatrixXd z = neural_trajectory(p, h, design);
  const MatrixXd mu = convolve(z, hrf_kernel(design.r, design.n()));
  double ll = 0.0;
  for (int l = 0; l < h.d; ++l) {
    const double s2 = p.sigma(l) * p.sigma(l);
    const double norm = -0.5 * std::log(2.0 * std::numbers::pi * s2);
    for (int j = 0; j < design.n(); ++j) {
      const double resid = y(j, l) - mu(j, l) - p.beta(l);
      ll += norm - resid * resid / (2.0 * s2);
    }
  }
  return ll;
}

}  // namespace cdcm
