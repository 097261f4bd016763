#include <catch2/catch_amalgamated.hpp>
#include <cdcm/identify.hpp>
#include <cdcm/simulate.hpp>

#include "support/oracles.hpp"

using namespace cdcm;
using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("benchmark_design properties") {
  auto d = benchmark_design();
  SECTION("intercept-augmented stimulus matrix of {rest, U1, U2} is unimodular") {
    MatrixXd ustar(3, 3);
    ustar << 1, 0, 0, 1, 1, 0, 1, 0, 1;
    REQUIRE(ustar.determinant() == Approx(1.0));
  }
  SECTION("blocks are long enough for d = 6") {
    for (const auto& b : d.blocks) REQUIRE(b.len >= 7);
  }
  SECTION("passes A1 and A2 for d up to 9") {
    for (int dim = 1; dim <= 9; ++dim) {
      auto rep = check_design(d, dim);
      REQUIRE(rep.a1.pass);
      REQUIRE(rep.a2.pass);
    }
    REQUIRE_FALSE(check_design(d, 10).a1.pass);
  }
}

TEST_CASE("simple_model_truth matches the published system") {
  auto [h, p] = simple_model_truth();
  MatrixXd a = assemble_a(p, h);
  REQUIRE(a(0, 0) == Approx(-0.55).epsilon(1e-14));
  REQUIRE(a(1, 1) == Approx(-0.55).epsilon(1e-14));
  REQUIRE(a(0, 1) == 0.3);
  REQUIRE(a(1, 0) == 0.4);
  MatrixXd b2 = assemble_b(p, h, 1);
  REQUIRE(b2(0, 1) == -0.2);
  REQUIRE(assemble_b(p, h, 0).cwiseAbs().maxCoeff() == 0.0);
  MatrixXd c = assemble_c(p, h);
  REQUIRE(c(0, 0) == 0.7);
  REQUIRE(c.cwiseAbs().sum() == 0.7);
  REQUIRE(p.s_star == VectorXd::Constant(2, 0.1));
  REQUIRE(p.beta.cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(h.p_theta() == 6);
}

TEST_CASE("chain_models") {
  SECTION("k = 1 reproduces the simple model") {
    auto [h1, p1] = simple_model_truth();
    auto [hk, pk] = chain_models(1);
    REQUIRE(assemble_a(pk, hk) == assemble_a(p1, h1));
    REQUIRE(assemble_c(pk, hk) == assemble_c(p1, h1));
    REQUIRE(assemble_b(pk, hk, 1) == assemble_b(p1, h1, 1));
  }
  SECTION("k = 3 satisfies A3 and A4 under the benchmark design") {
    auto [h, p] = chain_models(3);
    auto rep = audit_system(p, h, benchmark_design());
    REQUIRE(rep.a1.pass);
    REQUIRE(rep.a2.pass);
    REQUIRE(rep.a3_evaluated);
    for (const auto& e : rep.a3) REQUIRE(e.pass);
    REQUIRE(rep.a4_evaluated);
    for (const auto& e : rep.a4) REQUIRE(e.pass);
  }
  SECTION("k < 1 rejected") { REQUIRE_THROWS_AS(chain_models(0), invalid_input); }
}

TEST_CASE("simulate") {
  auto [h, p] = simple_model_truth();
  auto design = benchmark_design();

  SECTION("huge snr makes noise vanish") {
    SimulationSpec spec{p, h, design, 1e12, 7ull, true};
    auto b = simulate(spec);
    MatrixXd base = b.mu;
    base.rowwise() += p.beta.transpose();
    REQUIRE((b.y - base).cwiseAbs().maxCoeff() < 1e-9);
  }
  SECTION("per-ROI sample SNR averages to the target across 50 seeds") {
    VectorXd snr_acc = VectorXd::Zero(2);
    const int seeds = 50;
    for (int s = 0; s < seeds; ++s) {
      SimulationSpec spec{p, h, design, 1.68, 1000ull + s, true};
      auto b = simulate(spec);
      for (int l = 0; l < 2; ++l) {
        const VectorXd noise = b.y.col(l) - b.mu.col(l);
        auto sd = [](const VectorXd& v) {
          return std::sqrt((v.array() - v.mean()).square().sum() / (v.size() - 1));
        };
        snr_acc(l) += sd(b.mu.col(l)) / sd(noise);
      }
    }
    for (int l = 0; l < 2; ++l)
      REQUIRE(snr_acc(l) / seeds == Approx(1.68).epsilon(0.15));
  }
  SECTION("fixed seed reproduces bit-identical output") {
    SimulationSpec spec{p, h, design, 1.68, 424242ull, true};
    auto b1 = simulate(spec);
    auto b2 = simulate(spec);
    REQUIRE(b1.y == b2.y);
    REQUIRE(b1.z == b2.z);
  }
  SECTION("adding an ROI does not perturb existing noise streams") {
    auto [h3, p3] = chain_models(1);
    SimulationSpec spec2{p3, h3, design, 1.68, 5150ull, false};
    auto b2 = simulate(spec2);
    auto [h6, p6] = chain_models(3);
    SimulationSpec spec6{p6, h6, design, 1.68, 5150ull, false};
    auto b6 = simulate(spec6);
    // Same seed, same first-ROI stream: identical standardized noise.
    VectorXd n2 = (b2.y.col(0) - b2.mu.col(0)) / b2.sigma(0);
    VectorXd n6 = (b6.y.col(0) - b6.mu.col(0)) / b6.sigma(0);
    REQUIRE((n2 - n6).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("mean-unbiased over many seeds") {
    const int seeds = 1000;
    MatrixXd acc = MatrixXd::Zero(design.n(), h.d);
    VectorXd sigma;
    for (int s = 0; s < seeds; ++s) {
      SimulationSpec spec{p, h, design, 1.68, 777000ull + s, false};
      auto b = simulate(spec);
      acc += b.y;
      sigma = b.sigma;
    }
    acc /= seeds;
    SimulationSpec spec{p, h, design, 1.68, 0ull, false};
    auto ref = simulate(spec);
    // 3 Monte-Carlo SEs entrywise, with a small slack for the 300-entry sweep.
    for (int j = 0; j < design.n(); ++j)
      for (int l = 0; l < h.d; ++l) {
        const double se = sigma(l) / std::sqrt(double(seeds));
        REQUIRE(std::abs(acc(j, l) - ref.mu(j, l)) < 4.2 * se);
      }
  }
  SECTION("range clamping never amplifies noise and respects the bound") {
    ParamSet pb = p;
    pb.beta.setConstant(0.0);
    SimulationSpec loud{pb, h, design, 0.05, 31337ull, true};  // very noisy
    auto clamped = simulate(loud);
    REQUIRE(clamped.noise_scale <= 1.0);
    REQUIRE(clamped.noise_scale > 0.0);
    REQUIRE(clamped.y.maxCoeff() - clamped.y.minCoeff() <= 4.0 + 1e-9);
    SimulationSpec unclamped = loud;
    unclamped.range_clamp = false;
    auto raw = simulate(unclamped);
    REQUIRE(raw.y.maxCoeff() - raw.y.minCoeff() > 4.0);
    // Post-clamp noise SD cannot exceed the pre-clamp SD.
    auto sd = [](const VectorXd& v) {
      return std::sqrt((v.array() - v.mean()).square().sum() / (v.size() - 1));
    };
    for (int l = 0; l < 2; ++l) {
      const VectorXd nc = clamped.y.col(l) - clamped.mu.col(l);
      const VectorXd nr = raw.y.col(l) - raw.mu.col(l);
      REQUIRE(sd(nc) <= sd(nr) + 1e-12);
    }
  }
  SECTION("degenerate flat signal rejected") {
    ParamSet pz = p;
    pz.s_star.setZero();
    pz.c_entries.setZero();  // z and mu identically zero
    SimulationSpec spec{pz, h, design, 1.68, 1ull, true};
    REQUIRE_THROWS_AS(simulate(spec), degenerate_signal);
  }
  SECTION("snr must be positive") {
    SimulationSpec spec{p, h, design, 0.0, 1ull, true};
    REQUIRE_THROWS_AS(simulate(spec), invalid_input);
  }
}
