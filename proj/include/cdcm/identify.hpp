#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "cdcm/errors.hpp"
#include "cdcm/linalg.hpp"
#include "cdcm/model.hpp"

namespace cdcm {

// ============================================================================
// Assumption auditing (A1-A4)
// ============================================================================
// Numeric stand-ins for the exact conditions: "invertible" means condition
// number <= 1e10, "distinct real eigenvalues" means imaginary parts below
// 1e-10 and pairwise gaps of at least 1e-8, both relative to the spectral
// scale. Thresholds are recorded in the report.

namespace audit {
inline constexpr double kCondLimit = 1e10;
inline constexpr double kEigImagTol = 1e-10;
inline constexpr double kEigGapTol = 1e-8;
}  // namespace audit

struct AuditReport {
  struct A1 {
    bool evaluated = false;
    bool pass = false;
    int required_length = 0;            // d + 1
    std::vector<int> block_lengths;     // scan rows per block
    std::vector<int> usable_states;     // consecutive states under the block system
  };
  struct A2 {
    bool evaluated = false;
    bool pass = false;
    std::vector<int> selected_blocks;   // the found B*
    double cond_ustar = 0.0;
  };
  struct A3Entry {
    int block = 0;
    bool pass = false;
    std::vector<double> eig_real;
    std::vector<double> eig_imag;
  };
  struct A4Entry {
    int block = 0;
    bool pass = false;
    double cond = 0.0;
  };

  A1 a1;
  A2 a2;
  bool a3_evaluated = false;
  std::vector<A3Entry> a3;
  bool a4_evaluated = false;
  std::vector<A4Entry> a4;

  bool design_pass() const { return a1.pass && a2.pass; }
  bool all_pass() const {
    if (!design_pass()) return false;
    if (a3_evaluated)
      for (const auto& e : a3)
        if (!e.pass) return false;
    if (a4_evaluated)
      for (const auto& e : a4)
        if (!e.pass) return false;
    return a3_evaluated && a4_evaluated;
  }
};

namespace detail {

/// First usable state index of a block. Under prescan_rest with a nonzero
/// opening stimulus, the transition on [0, r) is governed by rest rather
/// than by block 0's system, so block 0's usable run starts one state late.
inline int block_first_state(const StimulusDesign& design, int b) {
  const auto& blk = design.blocks[static_cast<std::size_t>(b)];
  if (b == 0 && design.prescan_rest && blk.stim.any()) return blk.start + 1;
  return blk.start;
}

/// Number of consecutive states z(t_j) evolving under block b's system,
/// starting at block_first_state. The state at the next block boundary
/// belongs to the run; the final state of the design is z(t_{n-1}).
inline int block_usable_states(const StimulusDesign& design, int b) {
  const auto& blk = design.blocks[static_cast<std::size_t>(b)];
  const int first = block_first_state(design, b);
  const int last = std::min(blk.start + blk.len, design.n() - 1);
  return std::max(0, last - first + 1);
}

inline double cond_2norm(const MatrixXd& m) {
  Eigen::JacobiSVD<MatrixXd> svd(m);
  const double smin = svd.singularValues().minCoeff();
  if (!(smin > 0.0)) return std::numeric_limits<double>::infinity();
  return svd.singularValues().maxCoeff() / smin;
}

inline MatrixXd augment_ustar(const std::vector<VectorXi>& stims) {
  const Eigen::Index k = static_cast<Eigen::Index>(stims.size());
  const Eigen::Index m = stims.empty() ? 0 : stims[0].size();
  MatrixXd w(k, m + 1);
  for (Eigen::Index i = 0; i < k; ++i) {
    w(i, 0) = 1.0;
    w.row(i).tail(m) = stims[static_cast<std::size_t>(i)].cast<double>().transpose();
  }
  return w;
}

}  // namespace detail

/// Greedy B* search: first qualifying block per distinct stimulus vector,
/// then grow the set by the candidate that maximizes the minimum singular
/// value of the partial intercept-augmented matrix. Falls back to exhaustive
/// subsets when the greedy pick is singular.
inline AuditReport::A2 select_blocks(const StimulusDesign& design, int d) {
  AuditReport::A2 a2;
  a2.evaluated = true;
  const int m = design.m();
  const int need = m + 1;

  std::vector<int> candidates;  // first qualifying block per distinct stimulus
  std::vector<VectorXi> cand_stims;
  for (int b = 0; b < static_cast<int>(design.blocks.size()); ++b) {
    if (detail::block_usable_states(design, b) < d + 2) continue;
    const VectorXi& s = design.blocks[static_cast<std::size_t>(b)].stim;
    bool seen = false;
    for (const auto& cs : cand_stims) seen = seen || (cs == s);
    if (!seen) {
      candidates.push_back(b);
      cand_stims.push_back(s);
    }
  }
  if (static_cast<int>(candidates.size()) < need) return a2;

  auto sigma_min = [](const MatrixXd& w) {
    return Eigen::JacobiSVD<MatrixXd>(w).singularValues().minCoeff();
  };

  std::vector<int> picked;
  std::vector<VectorXi> picked_stims;
  for (int step = 0; step < need; ++step) {
    int best = -1;
    double best_s = -1.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      if (std::find(picked.begin(), picked.end(), candidates[c]) != picked.end())
        continue;
      auto trial = picked_stims;
      trial.push_back(cand_stims[c]);
      const double s = sigma_min(detail::augment_ustar(trial));
      if (s > best_s) {
        best_s = s;
        best = static_cast<int>(c);
      }
    }
    picked.push_back(candidates[static_cast<std::size_t>(best)]);
    picked_stims.push_back(cand_stims[static_cast<std::size_t>(best)]);
  }

  double cond = detail::cond_2norm(detail::augment_ustar(picked_stims));
  if (!(cond <= audit::kCondLimit) && candidates.size() > static_cast<std::size_t>(need)) {
    // Exhaustive fallback over subsets (the candidate pool is tiny).
    std::vector<int> idx(candidates.size());
    std::vector<bool> mask(candidates.size(), false);
    std::fill(mask.begin(), mask.begin() + need, true);
    std::sort(mask.begin(), mask.end());
    do {
      std::vector<int> sub;
      std::vector<VectorXi> sub_stims;
      for (std::size_t c = 0; c < candidates.size(); ++c)
        if (mask[c]) {
          sub.push_back(candidates[c]);
          sub_stims.push_back(cand_stims[c]);
        }
      const double cc = detail::cond_2norm(detail::augment_ustar(sub_stims));
      if (cc < cond) {
        cond = cc;
        picked = sub;
        picked_stims = sub_stims;
      }
    } while (std::next_permutation(mask.begin(), mask.end()));
  }

  a2.selected_blocks = picked;
  a2.cond_ustar = cond;
  a2.pass = cond <= audit::kCondLimit;
  return a2;
}

/// Design-only checks. A1 passes when every block has at least d + 1 scan
/// rows; A2 searches for m + 1 qualifying blocks with an invertible
/// intercept-augmented stimulus matrix. Failures are report entries.
inline AuditReport check_design(const StimulusDesign& design, int d) {
  AuditReport rep;
  rep.a1.evaluated = true;
  rep.a1.required_length = d + 1;
  rep.a1.pass = true;
  for (int b = 0; b < static_cast<int>(design.blocks.size()); ++b) {
    rep.a1.block_lengths.push_back(design.blocks[static_cast<std::size_t>(b)].len);
    rep.a1.usable_states.push_back(detail::block_usable_states(design, b));
    if (design.blocks[static_cast<std::size_t>(b)].len < d + 1) rep.a1.pass = false;
  }
  rep.a2 = select_blocks(design, d);
  return rep;
}

/// Per-block spectrum check on the assembled block matrices.
inline std::vector<AuditReport::A3Entry> check_a3(const ParamSet& p,
                                                  const Hypothesis& h,
                                                  const StimulusDesign& design,
                                                  const std::vector<int>& blocks) {
  std::vector<AuditReport::A3Entry> out;
  for (int b : blocks) {
    const auto& blk = design.blocks[static_cast<std::size_t>(b)];
    auto [at, ct] = assemble_block_system(p, h, blk.stim);
    Eigen::EigenSolver<MatrixXd> es(at);
    AuditReport::A3Entry e;
    e.block = b;
    const Eigen::VectorXcd lam = es.eigenvalues();
    const double scale = std::max(lam.cwiseAbs().maxCoeff(), 1e-300);
    e.pass = true;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      e.eig_real.push_back(lam(i).real());
      e.eig_imag.push_back(lam(i).imag());
      if (std::abs(lam(i).imag()) > audit::kEigImagTol * scale) e.pass = false;
    }
    for (Eigen::Index i = 0; i < lam.size(); ++i)
      for (Eigen::Index j = i + 1; j < lam.size(); ++j)
        if (std::abs(lam(i) - lam(j)) < audit::kEigGapTol * scale) e.pass = false;
    out.push_back(std::move(e));
  }
  return out;
}

/// Data-matrix check: X0 = [x_0 .. x_d] with x_j = [z(t^(b) + jr), 1]^T must
/// be well conditioned.
inline std::vector<AuditReport::A4Entry> check_a4(const MatrixXd& z,
                                                  const StimulusDesign& design,
                                                  const std::vector<int>& blocks) {
  const int d = static_cast<int>(z.cols());
  std::vector<AuditReport::A4Entry> out;
  for (int b : blocks) {
    const int first = detail::block_first_state(design, b);
    if (first + d >= z.rows() ||
        detail::block_usable_states(design, b) < d + 1)
      throw invalid_input("check_a4: block " + std::to_string(b) +
                          " has too few within-block samples");
    MatrixXd x0(d + 1, d + 1);
    for (int j = 0; j <= d; ++j) {
      x0.block(0, j, d, 1) = z.row(first + j).transpose();
      x0(d, j) = 1.0;
    }
    AuditReport::A4Entry e;
    e.block = b;
    e.cond = detail::cond_2norm(x0);
    e.pass = e.cond <= audit::kCondLimit;
    out.push_back(e);
  }
  return out;
}

/// Full audit of a (design, hypothesis, parameter) triple.
inline AuditReport audit_system(const ParamSet& p, const Hypothesis& h,
                                const StimulusDesign& design) {
  AuditReport rep = check_design(design, h.d);
  if (!rep.a2.pass) return rep;
  rep.a3 = check_a3(p, h, design, rep.a2.selected_blocks);
  rep.a3_evaluated = true;
  const MatrixXd z = neural_trajectory(p, h, design);
  rep.a4 = check_a4(z, design, rep.a2.selected_blocks);
  rep.a4_evaluated = true;
  return rep;
}

// ============================================================================
// Constructive recovery (Theorem 1 chain)
// ============================================================================

/// Per-block recovery from d + 2 consecutive states (rows of v) spaced r
/// apart under a constant stimulus:
///   Phi = (Z2 - Z1)(Z1 - Z0)^{-1},  A~ = r^{-1} log Phi,
///   c~  = r^{-1} w(1; r A~)^{-1} (v_1 - Phi v_0).
inline std::pair<MatrixXd, VectorXd> recover_block(const MatrixXd& v, double r) {
  const int d = static_cast<int>(v.cols());
  if (v.rows() != d + 2)
    throw invalid_input("recover_block: need exactly d + 2 states");
  if (!(r > 0.0)) throw invalid_input("recover_block: r must be positive");

  // Z_i columns are states v_i .. v_{i+d-1}.
  const MatrixXd z0 = v.middleRows(0, d).transpose();
  const MatrixXd z1 = v.middleRows(1, d).transpose();
  const MatrixXd z2 = v.middleRows(2, d).transpose();

  const MatrixXd m1 = z1 - z0;
  Eigen::FullPivLU<MatrixXd> lu(m1);
  lu.setThreshold(1e-13);
  if (!lu.isInvertible())
    throw a4_violation("recover_block: singular difference matrix Z1 - Z0");
  // Phi = (Z2 - Z1) m1^{-1}, via m1^T Phi^T = (Z2 - Z1)^T.
  const MatrixXd phi =
      m1.transpose().partialPivLu().solve((z2 - z1).transpose()).transpose();

  MatrixXd at;
  try {
    at = mat_log_real(phi) / r;
  } catch (const not_real_log_identifiable& err) {
    throw a3_violation(std::string("recover_block: ") + err.what());
  }

  const VectorXd p = v.row(1).transpose() - phi * v.row(0).transpose();
  const MatrixXd w1 = w_antideriv(1.0, r * at);
  const VectorXd ct = w1.partialPivLu().solve(p) / r;
  return {at, ct};
}

struct BlockSystem {
  VectorXi stim;
  MatrixXd a_tilde;
  VectorXd c_tilde;
};

struct GlobalRecovery {
  MatrixXd a;
  std::vector<MatrixXd> b;  // m matrices
  MatrixXd c;               // d x m
  double residual = 0.0;        // max abs stacking residual
  double intercept_resid = 0.0; // recovered intercept column of the c-stack
};

/// Unmixing of per-block systems through the stacked linear system
/// [A; B_1; ..; B_m] = (U* (x) I_d)^{-1} [A~^(b_1); ..]. Solved entrywise:
/// the Kronecker structure decouples into one (m+1)-sized solve per matrix
/// entry. Over-determined input is solved in the least-squares sense with
/// the residual reported.
inline GlobalRecovery recover_global(const std::vector<BlockSystem>& systems,
                                     int d, int m) {
  const int k = static_cast<int>(systems.size());
  if (k < m + 1)
    throw a2_violation("recover_global: need at least m + 1 block systems");

  MatrixXd w(k, m + 1);
  for (int i = 0; i < k; ++i) {
    w(i, 0) = 1.0;
    w.row(i).tail(m) = systems[static_cast<std::size_t>(i)].stim.cast<double>().transpose();
  }
  Eigen::ColPivHouseholderQR<MatrixXd> qr(w);
  qr.setThreshold(1e-10);
  if (qr.rank() < m + 1)
    throw a2_violation("recover_global: singular intercept-augmented U*");

  MatrixXd rhs_ab(k, d * d);
  MatrixXd rhs_c(k, d);
  for (int i = 0; i < k; ++i) {
    const auto& s = systems[static_cast<std::size_t>(i)];
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b) rhs_ab(i, a * d + b) = s.a_tilde(a, b);
    rhs_c.row(i) = s.c_tilde.transpose();
  }
  const MatrixXd sol_ab = qr.solve(rhs_ab);
  const MatrixXd sol_c = qr.solve(rhs_c);

  GlobalRecovery out;
  out.a = MatrixXd(d, d);
  out.b.assign(static_cast<std::size_t>(m), MatrixXd(d, d));
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      out.a(a, b) = sol_ab(0, a * d + b);
      for (int i = 0; i < m; ++i)
        out.b[static_cast<std::size_t>(i)](a, b) = sol_ab(1 + i, a * d + b);
    }
  out.c = sol_c.bottomRows(m).transpose();
  out.intercept_resid = sol_c.row(0).cwiseAbs().maxCoeff();
  out.residual = std::max((w * sol_ab - rhs_ab).cwiseAbs().maxCoeff(),
                          (w * sol_c - rhs_c).cwiseAbs().maxCoeff());
  return out;
}

/// Initial-state recovery: s* = e^{-r A_init} (z(r) - w(r; A_init) c_init),
/// the exact inverse of one affine step.
inline VectorXd recover_initial(const VectorXd& z_r, const MatrixXd& a_init,
                                const VectorXd& c_init, double r) {
  return mat_exp(-r * a_init) * (z_r - w_antideriv(r, a_init) * c_init);
}

/// HRF deconvolution by forward substitution on the lower-triangular
/// Toeplitz system H z = mu. Requires h(r) != 0.
inline MatrixXd deconvolve(const MatrixXd& mu, const VectorXd& hker) {
  const Eigen::Index n = mu.rows();
  if (hker.size() < n + 1)
    throw invalid_input("deconvolve: kernel shorter than n + 1 samples");
  if (std::abs(hker(1)) <= 1e-12)
    throw non_injective_observation("deconvolve: kernel vanishes at the TR");
  MatrixXd z(n, mu.cols());
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::RowVectorXd acc = mu.row(k);
    for (Eigen::Index j = 0; j < k; ++j) acc -= hker(k + 1 - j) * z.row(j);
    z.row(k) = acc / hker(1);
  }
  return z;
}

// ============================================================================
// End-to-end pipeline
// ============================================================================

struct RecoveredSystem {
  GlobalRecovery global;
  VectorXd s_star;
  std::vector<int> blocks_used;
};

/// Theorem-1 pipeline on a noiseless latent trajectory: per-block recovery
/// over the selected B*, global unmixing, then initial-state inversion.
inline RecoveredSystem recover_from_latent(const MatrixXd& z,
                                           const StimulusDesign& design,
                                           int m) {
  const int d = static_cast<int>(z.cols());
  const AuditReport::A2 sel = select_blocks(design, d);
  if (!sel.pass)
    throw a2_violation("recover_from_latent: no qualifying block set (A2)");

  std::vector<BlockSystem> systems;
  for (int b : sel.selected_blocks) {
    const int first = detail::block_first_state(design, b);
    auto [at, ct] = recover_block(z.middleRows(first, d + 2), design.r);
    systems.push_back({design.blocks[static_cast<std::size_t>(b)].stim, at, ct});
  }

  RecoveredSystem out;
  out.blocks_used = sel.selected_blocks;
  out.global = recover_global(systems, d, m);

  MatrixXd a_init = out.global.a;
  VectorXd c_init = VectorXd::Zero(d);
  if (!design.prescan_rest) {
    const VectorXi& u0 = design.blocks.front().stim;
    for (int i = 0; i < m; ++i)
      if (u0(i)) {
        a_init += out.global.b[static_cast<std::size_t>(i)];
        c_init += out.global.c.col(i);
      }
  }
  out.s_star = recover_initial(z.row(1).transpose(), a_init, c_init, design.r);
  return out;
}

}  // namespace cdcm
