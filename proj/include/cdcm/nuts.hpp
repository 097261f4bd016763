#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "cdcm/diagnostics.hpp"
#include "cdcm/errors.hpp"
#include "cdcm/rng.hpp"

namespace cdcm {

/// Target interface: returns the log density at x and fills its gradient.
/// A return of -inf marks an out-of-support point; the gradient is ignored.
using LogDensityFn = std::function<double(const VectorXd&, VectorXd&)>;

struct SamplerConfig {
  int warmup = 5000;
  double target_accept = 0.9;
  int max_treedepth = 10;
  double ess_alpha = 0.05;
  double ess_eps = 0.05;
  long max_iterations = 100000;  // post-warmup cap per chain
  int chains = 1;
  std::uint64_t seed = 0;
  int batch_size = 1000;   // ESS check cadence
  long fixed_sampling = 0; // > 0: draw exactly this many, skip the ESS rule
  bool adapt_mass = true;
  int threads = 0;         // 0: hardware default (capped by CDCM_THREADS)

  void validate() const {
    if (warmup < 100) throw invalid_input("SamplerConfig: warmup must be >= 100");
    if (!(target_accept > 0.0 && target_accept < 1.0))
      throw invalid_input("SamplerConfig: target_accept must be in (0, 1)");
    if (max_treedepth < 1 || chains < 1 || batch_size < 1)
      throw invalid_input("SamplerConfig: bad sampler settings");
  }
};

struct PosteriorDraws {
  std::vector<std::string> names;
  MatrixXd draws;  // N x P post-warmup, chains stacked chain-major
  double step_size = 0.0;
  long divergence_count = 0;
  long max_depth_hits = 0;
  std::uint64_t seed = 0;
  int chains = 1;
  long iterations_per_chain = 0;
  bool converged = true;
  bool divergence_warning = false;  // > 1% of post-warmup iterations diverged
  double ess = 0.0;                 // summed multivariate ESS at stop time
  double ess_target = 0.0;          // W(P, alpha, eps); 0 under fixed sampling
  std::string cov_estimator = "batch-means";
};

// ============================================================================
// No-U-Turn sampler
// ============================================================================
// Multiplicative-doubling trajectories with multinomial selection, a diagonal
// mass matrix adapted during warmup, and dual-averaging step-size adaptation
// toward the configured acceptance target.

namespace nuts_detail {

inline constexpr double kDivergenceGap = 1000.0;

struct Point {
  VectorXd q;
  VectorXd p;
  VectorXd grad;
  double logp = 0.0;
};

struct Tree {
  Point minus, plus, prop;
  double log_sum_w = -std::numeric_limits<double>::infinity();
  double sum_accept = 0.0;
  long n_leapfrog = 0;
  bool divergent = false;
  bool ok = true;
};

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

class Chain {
 public:
  Chain(const LogDensityFn& target, SamplerConfig cfg, VectorXd init,
        std::uint64_t chain_seed)
      : target_(target),
        cfg_(std::move(cfg)),
        rng_(Rng::stream(cfg_.seed, chain_seed)),
        dim_(static_cast<int>(init.size())),
        inv_mass_(VectorXd::Ones(init.size())) {
    cur_.q = std::move(init);
    cur_.grad.resize(dim_);
    cur_.logp = target_(cur_.q, cur_.grad);
    if (!std::isfinite(cur_.logp))
      throw initialization_error("nuts: initial point has non-finite log density");
  }

  void run_warmup() {
    step_ = find_initial_step();
    mu_ = std::log(10.0 * step_);
    log_step_bar_ = std::log(step_);
    hbar_ = 0.0;
    da_count_ = 0;

    const int w = cfg_.warmup;
    // Stan-style windowing: 75 step-size-only, expanding variance windows,
    // 50 step-size-only at the end. Short warmups adapt the step size only.
    const bool window_mass = cfg_.adapt_mass && w >= 150;
    const int init_buf = window_mass ? 75 : w;
    const int term_buf = window_mass ? 50 : 0;
    int window = 25;
    int window_end = window_mass ? init_buf + window : w;

    VectorXd wsum = VectorXd::Zero(dim_);
    VectorXd wsum2 = VectorXd::Zero(dim_);
    long wn = 0;

    for (int it = 0; it < w; ++it) {
      const double accept = iterate(true);
      adapt_step(accept);
      const bool in_window = window_mass && it >= init_buf && it < w - term_buf;
      if (in_window) {
        wsum += cur_.q;
        wsum2 += cur_.q.cwiseProduct(cur_.q);
        ++wn;
        if (it + 1 == window_end) {
          if (wn > 1) {
            const VectorXd mean = wsum / double(wn);
            VectorXd var =
                (wsum2 - double(wn) * mean.cwiseProduct(mean)) / double(wn - 1);
            const double shrink = double(wn) / (double(wn) + 5.0);
            inv_mass_ = shrink * var.array() + (1.0 - shrink) * 1e-3;
            inv_mass_ = inv_mass_.cwiseMax(1e-10);
          }
          wsum.setZero();
          wsum2.setZero();
          wn = 0;
          window *= 2;
          window_end = std::min(w - term_buf, window_end + window);
          if (w - term_buf - window_end < window) window_end = w - term_buf;
          // Restart dual averaging around the current step size.
          mu_ = std::log(10.0 * step_);
          log_step_bar_ = std::log(step_);
          hbar_ = 0.0;
          da_count_ = 0;
        }
      }
    }
    step_ = std::exp(log_step_bar_);
  }

  /// One post-warmup batch; draws are appended as rows.
  void sample_batch(int count, std::vector<VectorXd>& out) {
    for (int i = 0; i < count; ++i) {
      iterate(false);
      out.push_back(cur_.q);
    }
  }

  double step_size() const { return step_; }
  long divergences() const { return post_divergences_; }
  long depth_hits() const { return post_depth_hits_; }

 private:
  double hamiltonian(const Point& pt) const {
    return -pt.logp + 0.5 * pt.p.cwiseProduct(inv_mass_).dot(pt.p);
  }

  /// One leapfrog step in place; returns false on a non-finite target.
  bool leapfrog(Point& pt, double dir_step) {
    pt.p += 0.5 * dir_step * pt.grad;
    pt.q += dir_step * inv_mass_.cwiseProduct(pt.p);
    pt.logp = target_(pt.q, pt.grad);
    if (!std::isfinite(pt.logp)) return false;
    pt.p += 0.5 * dir_step * pt.grad;
    return true;
  }

  double find_initial_step() {
    double step = 1.0;
    Point pt = cur_;
    pt.p = draw_momentum();
    const double h0 = hamiltonian(pt);
    Point trial = pt;
    if (!leapfrog(trial, step)) {
      // Shrink until the first step stays in support.
      while (!leapfrog(trial = pt, step)) {
        step *= 0.5;
        if (step < 1e-16)
          throw initialization_error("nuts: cannot find a stable step size");
      }
    }
    double accept = std::exp(h0 - hamiltonian(trial));
    const bool grow = accept > 0.5;
    for (int i = 0; i < 64; ++i) {
      step *= grow ? 2.0 : 0.5;
      trial = pt;
      if (!leapfrog(trial, step)) {
        if (grow) { step *= 0.5; break; }
        continue;
      }
      accept = std::exp(h0 - hamiltonian(trial));
      if (grow ? accept <= 0.5 : accept >= 0.5) break;
    }
    return std::clamp(step, 1e-10, 1e2);
  }

  VectorXd draw_momentum() {
    VectorXd p(dim_);
    for (int i = 0; i < dim_; ++i) p(i) = rng_.normal() / std::sqrt(inv_mass_(i));
    return p;
  }

  bool uturn(const Point& minus, const Point& plus) const {
    const VectorXd dq = plus.q - minus.q;
    return dq.dot(inv_mass_.cwiseProduct(minus.p)) < 0.0 ||
           dq.dot(inv_mass_.cwiseProduct(plus.p)) < 0.0;
  }

  Tree build_tree(const Point& from, int depth, double dir_step, double h0) {
    Tree t;
    if (depth == 0) {
      Point pt = from;
      const bool finite = leapfrog(pt, dir_step);
      const double h = finite ? hamiltonian(pt) : std::numeric_limits<double>::infinity();
      t.n_leapfrog = 1;
      t.divergent = !finite || h - h0 > kDivergenceGap;
      t.ok = !t.divergent;
      t.sum_accept = std::min(1.0, std::exp(h0 - h));
      t.log_sum_w = t.divergent ? -std::numeric_limits<double>::infinity() : h0 - h;
      t.minus = pt;
      t.plus = pt;
      t.prop = std::move(pt);
      return t;
    }
    Tree first = build_tree(from, depth - 1, dir_step, h0);
    if (!first.ok) return first;
    const Point& edge = dir_step > 0 ? first.plus : first.minus;
    Tree second = build_tree(edge, depth - 1, dir_step, h0);

    Tree t2;
    t2.n_leapfrog = first.n_leapfrog + second.n_leapfrog;
    t2.sum_accept = first.sum_accept + second.sum_accept;
    t2.divergent = first.divergent || second.divergent;
    t2.log_sum_w = log_sum_exp(first.log_sum_w, second.log_sum_w);
    t2.prop = first.prop;
    if (second.ok &&
        std::log(rng_.uniform()) < second.log_sum_w - t2.log_sum_w)
      t2.prop = second.prop;
    t2.minus = dir_step > 0 ? first.minus : second.minus;
    t2.plus = dir_step > 0 ? second.plus : first.plus;
    t2.ok = second.ok && !t2.divergent && !uturn(t2.minus, t2.plus);
    return t2;
  }

  /// One NUTS transition; returns the mean acceptance statistic.
  double iterate(bool warmup_phase) {
    Point init = cur_;
    init.p = draw_momentum();
    const double h0 = hamiltonian(init);

    Point minus = init, plus = init, prop = init;
    double total_lw = 0.0;  // weight of the initial point relative to itself
    double sum_accept = 0.0;
    long n_leapfrog = 0;
    bool diverged = false;
    int depth = 0;

    for (; depth < cfg_.max_treedepth; ++depth) {
      const bool forward = rng_.uniform() < 0.5;
      const double dir_step = forward ? step_ : -step_;
      Tree sub = build_tree(forward ? plus : minus, depth, dir_step, h0);
      sum_accept += sub.sum_accept;
      n_leapfrog += sub.n_leapfrog;
      if (sub.divergent) diverged = true;
      if (!sub.ok) break;
      // Biased progressive sampling toward the new subtree.
      if (std::log(rng_.uniform()) < sub.log_sum_w - total_lw) prop = sub.prop;
      total_lw = log_sum_exp(total_lw, sub.log_sum_w);
      if (forward)
        plus = sub.plus;
      else
        minus = sub.minus;
      if (uturn(minus, plus)) break;
    }

    if (!warmup_phase) {
      if (diverged) ++post_divergences_;
      if (depth == cfg_.max_treedepth) ++post_depth_hits_;
    }
    cur_ = std::move(prop);
    return n_leapfrog > 0 ? sum_accept / double(n_leapfrog) : 0.0;
  }

  void adapt_step(double accept) {
    ++da_count_;
    constexpr double gamma = 0.05, t0 = 10.0, kappa = 0.75;
    const double eta = 1.0 / (da_count_ + t0);
    hbar_ = (1.0 - eta) * hbar_ + eta * (cfg_.target_accept - accept);
    const double log_step = mu_ - std::sqrt(double(da_count_)) / gamma * hbar_;
    const double w = std::pow(double(da_count_), -kappa);
    log_step_bar_ = w * log_step + (1.0 - w) * log_step_bar_;
    step_ = std::exp(log_step);
  }

  const LogDensityFn& target_;
  SamplerConfig cfg_;
  Rng rng_;
  int dim_;
  VectorXd inv_mass_;
  Point cur_;
  double step_ = 1.0;
  double mu_ = 0.0, log_step_bar_ = 0.0, hbar_ = 0.0;
  long da_count_ = 0;
  long post_divergences_ = 0;
  long post_depth_hits_ = 0;
};

inline int thread_budget(int requested, int jobs) {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  int cap = requested > 0 ? requested : hw;
  if (const char* env = std::getenv("CDCM_THREADS")) {
    const int e = std::atoi(env);
    if (e > 0) cap = std::min(cap, e);
  }
  return std::max(1, std::min(cap, jobs));
}

template <typename Fn>
void parallel_for(int threads, int jobs, Fn&& fn) {
  if (threads <= 1 || jobs <= 1) {
    for (int i = 0; i < jobs; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < jobs; i = next.fetch_add(1)) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace nuts_detail

/// Runs cfg.chains NUTS chains from the given initial points (one per chain,
/// or a single shared point). Post-warmup draws accumulate in lock-step
/// batches until the summed multivariate ESS clears W(P, alpha, eps), until
/// fixed_sampling draws exist, or until max_iterations; stopping at the cap
/// flags the result as non-converged rather than failing silently.
inline PosteriorDraws nuts_sample(const LogDensityFn& target,
                                  const SamplerConfig& cfg,
                                  const std::vector<VectorXd>& inits,
                                  std::vector<std::string> names = {}) {
  cfg.validate();
  if (inits.empty()) throw invalid_input("nuts_sample: no initial points");
  const int chains = cfg.chains;
  const int dim = static_cast<int>(inits[0].size());

  std::vector<std::unique_ptr<nuts_detail::Chain>> state;
  for (int c = 0; c < chains; ++c) {
    const VectorXd& init = inits[static_cast<std::size_t>(
        std::min<std::size_t>(static_cast<std::size_t>(c), inits.size() - 1))];
    state.push_back(std::make_unique<nuts_detail::Chain>(
        target, cfg, init, 0x9000 + static_cast<std::uint64_t>(c)));
  }

  const int nthreads = nuts_detail::thread_budget(cfg.threads, chains);
  nuts_detail::parallel_for(nthreads, chains,
                            [&](int c) { state[static_cast<std::size_t>(c)]->run_warmup(); });

  std::vector<std::vector<VectorXd>> chain_draws(static_cast<std::size_t>(chains));
  const double target_ess =
      cfg.fixed_sampling > 0 ? 0.0 : ess_threshold(dim, cfg.ess_alpha, cfg.ess_eps);

  long per_chain = 0;
  bool converged = false;
  double achieved_ess = 0.0;
  while (true) {
    long batch = cfg.batch_size;
    if (cfg.fixed_sampling > 0) batch = std::min(batch, cfg.fixed_sampling - per_chain);
    batch = std::min(batch, cfg.max_iterations - per_chain);
    if (batch <= 0) break;

    nuts_detail::parallel_for(nthreads, chains, [&](int c) {
      state[static_cast<std::size_t>(c)]->sample_batch(
          static_cast<int>(batch), chain_draws[static_cast<std::size_t>(c)]);
    });
    per_chain += batch;

    if (cfg.fixed_sampling > 0) {
      if (per_chain >= cfg.fixed_sampling) {
        converged = true;
        break;
      }
      continue;
    }
    // ESS adds across independent chains.
    double total = 0.0;
    bool estimable = true;
    for (const auto& cd : chain_draws) {
      MatrixXd m(static_cast<Eigen::Index>(cd.size()), dim);
      for (std::size_t i = 0; i < cd.size(); ++i)
        m.row(static_cast<Eigen::Index>(i)) = cd[i].transpose();
      const auto ess = try_multi_ess(m);
      if (!ess) {
        estimable = false;
        break;
      }
      total += *ess;
    }
    if (estimable) {
      achieved_ess = total;
      if (total >= target_ess) {
        converged = true;
        break;
      }
    }
    if (per_chain >= cfg.max_iterations) break;
  }

  PosteriorDraws out;
  out.names = std::move(names);
  if (out.names.empty())
    for (int i = 0; i < dim; ++i) out.names.push_back("x_" + std::to_string(i + 1));
  out.seed = cfg.seed;
  out.chains = chains;
  out.iterations_per_chain = per_chain;
  out.converged = converged;
  out.ess = achieved_ess;
  out.ess_target = target_ess;

  long total_rows = 0;
  for (const auto& cd : chain_draws) total_rows += static_cast<long>(cd.size());
  out.draws.resize(total_rows, dim);
  long row = 0;
  for (const auto& cd : chain_draws)
    for (const auto& q : cd) out.draws.row(row++) = q.transpose();

  double step_acc = 0.0;
  for (const auto& ch : state) {
    out.divergence_count += ch->divergences();
    out.max_depth_hits += ch->depth_hits();
    step_acc += ch->step_size();
  }
  out.step_size = step_acc / chains;
  out.divergence_warning =
      out.divergence_count > 0.01 * double(per_chain) * double(chains);
  return out;
}

inline PosteriorDraws nuts_sample(const LogDensityFn& target,
                                  const SamplerConfig& cfg, const VectorXd& init,
                                  std::vector<std::string> names = {}) {
  return nuts_sample(target, cfg, std::vector<VectorXd>{init}, std::move(names));
}

}  // namespace cdcm
