#include <catch2/catch_amalgamated.hpp>
#include <cdcm/identify.hpp>
#include <cdcm/simulate.hpp>

#include "support/oracles.hpp"

using namespace cdcm;
using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::MatrixXi;
using Eigen::VectorXd;
using Eigen::VectorXi;

TEST_CASE("check_design") {
  SECTION("benchmark design, d = 2") {
    auto rep = check_design(benchmark_design(), 2);
    REQUIRE(rep.a1.pass);
    REQUIRE(rep.a2.pass);
    REQUIRE(rep.a2.selected_blocks.size() == 3);
    // The selected set must realize {rest, U1, U2}.
    auto design = benchmark_design();
    std::vector<VectorXi> stims;
    for (int b : rep.a2.selected_blocks)
      stims.push_back(design.blocks[static_cast<std::size_t>(b)].stim);
    auto has = [&](int u1, int u2) {
      for (const auto& s : stims)
        if (s(0) == u1 && s(1) == u2) return true;
      return false;
    };
    REQUIRE(has(0, 0));
    REQUIRE(has(1, 0));
    REQUIRE(has(0, 1));
    REQUIRE(rep.a2.cond_ustar < 10.0);
  }
  SECTION("single-block design fails A2") {
    MatrixXi u = MatrixXi::Ones(30, 1);
    auto rep = check_design(block_partition(u, 2.0), 2);
    REQUIRE_FALSE(rep.a2.pass);
  }
  SECTION("d = 10 fails A1 on 10-TR blocks") {
    auto rep = check_design(benchmark_design(), 10);
    REQUIRE_FALSE(rep.a1.pass);
  }
}

TEST_CASE("check_a3") {
  auto [h, p] = simple_model_truth();
  auto design = benchmark_design();
  auto sel = select_blocks(design, 2);

  SECTION("simple-model blocks pass") {
    auto verdicts = check_a3(p, h, design, sel.selected_blocks);
    REQUIRE(verdicts.size() == 3);
    for (const auto& v : verdicts) REQUIRE(v.pass);
  }
  SECTION("rotation-like coupling fails") {
    ParamSet p2 = p;
    // Strong antisymmetric coupling forces a complex pair.
    p2.offdiag_a << -1.0, 1.0;
    auto verdicts = check_a3(p2, h, design, {sel.selected_blocks[0]});
    REQUIRE_FALSE(verdicts[0].pass);
  }
  SECTION("diagonal system with distinct entries passes") {
    Hypothesis hd;
    hd.d = 2;
    hd.m = 1;
    hd.mask_a = BoolMat::Constant(2, 2, false);
    hd.mask_a(0, 0) = hd.mask_a(1, 1) = true;
    hd.mask_b = {BoolMat::Constant(2, 2, false)};
    hd.mask_c = BoolMat::Constant(2, 1, true);
    hd.validate();
    ParamSet pd = ParamSet::zero(hd);
    pd.nu_diag_a << 0.0, 0.5;
    MatrixXi u = MatrixXi::Zero(10, 1);
    auto dd = block_partition(u, 2.0);
    auto verdicts = check_a3(pd, hd, dd, {0});
    REQUIRE(verdicts[0].pass);
  }
}

TEST_CASE("check_a4") {
  auto [h, p] = simple_model_truth();
  auto design = benchmark_design();
  auto sel = select_blocks(design, 2);

  SECTION("noiseless simple-model trajectory passes") {
    MatrixXd z = neural_trajectory(p, h, design);
    auto verdicts = check_a4(z, design, sel.selected_blocks);
    for (const auto& v : verdicts) REQUIRE(v.pass);
  }
  SECTION("trajectory pinned at a fixed point fails") {
    MatrixXd z = MatrixXd::Ones(design.n(), 2);
    auto verdicts = check_a4(z, design, {0});
    REQUIRE_FALSE(verdicts[0].pass);
  }
  SECTION("linearly dependent states fail") {
    MatrixXd z(design.n(), 2);
    for (int j = 0; j < design.n(); ++j) {
      z(j, 0) = j;  // collinear with the intercept-augmented column
      z(j, 1) = 2.0 * j;
    }
    auto verdicts = check_a4(z, design, {0});
    REQUIRE_FALSE(verdicts[0].pass);
  }
  SECTION("too few samples rejected") {
    MatrixXd z = MatrixXd::Random(2, 2);
    MatrixXi u = MatrixXi::Zero(2, 1);
    auto dd = block_partition(u, 2.0);
    REQUIRE_THROWS_AS(check_a4(z, dd, {0}), invalid_input);
  }
}

TEST_CASE("recover_block") {
  SECTION("scalar system recovers a and c exactly") {
    const double a = -0.5, c = 0.7, r = 2.0;
    MatrixXd v(3, 1);  // d + 2 = 3 states from v0 = 0
    v(0, 0) = 0.0;
    for (int j = 1; j < 3; ++j) {
      VectorXd prev = v.row(j - 1).transpose();
      MatrixXd am(1, 1);
      am << a;
      VectorXd cv(1);
      cv << c;
      v.row(j) = affine_step(prev, am, cv, r).transpose();
    }
    auto [at, ct] = recover_block(v, r);
    REQUIRE(at(0, 0) == Approx(a).epsilon(1e-10));
    REQUIRE(ct(0) == Approx(c).epsilon(1e-10));
  }
  SECTION("simple-model rest block recovers A") {
    auto [h, p] = simple_model_truth();
    auto design = benchmark_design();
    MatrixXd z = neural_trajectory(p, h, design);
    auto [at, ct] = recover_block(z.middleRows(0, 4), design.r);
    MatrixXd a = assemble_a(p, h);
    REQUIRE((at - a).cwiseAbs().maxCoeff() < 1e-8);
    REQUIRE(ct.cwiseAbs().maxCoeff() < 1e-8);
  }
  SECTION("constant states raise an A4 violation") {
    MatrixXd v = MatrixXd::Ones(4, 2);
    REQUIRE_THROWS_AS(recover_block(v, 2.0), a4_violation);
  }
  SECTION("oscillatory states raise an A3 violation") {
    // States generated by a rotation have no unique real log.
    MatrixXd v(4, 2);
    const double w = 2.0;  // r * omega = pi would alias; use a complex-pair case
    for (int j = 0; j < 4; ++j) {
      const double t = 2.0 * j;
      v(j, 0) = std::cos(w * t) + 0.3;
      v(j, 1) = std::sin(w * t) - 0.1;
    }
    REQUIRE_THROWS_AS(recover_block(v, 2.0), a3_violation);
  }
}

TEST_CASE("recover_global") {
  auto [h, p] = simple_model_truth();
  SECTION("three exact block systems unmix to (A, B2, C)") {
    std::vector<BlockSystem> systems;
    for (auto [u1, u2] : {std::pair{0, 0}, std::pair{1, 0}, std::pair{0, 1}}) {
      VectorXi u(2);
      u << u1, u2;
      auto [at, ct] = assemble_block_system(p, h, u);
      systems.push_back({u, at, ct});
    }
    auto rec = recover_global(systems, 2, 2);
    REQUIRE((rec.a - assemble_a(p, h)).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(rec.b[1](0, 1) == Approx(-0.2).epsilon(1e-10));
    REQUIRE(rec.b[0].cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(rec.c(0, 0) == Approx(0.7).epsilon(1e-10));
    REQUIRE(rec.residual < 1e-12);
    REQUIRE(rec.intercept_resid < 1e-12);
  }
  SECTION("m = 0 degenerate case: A equals the single block matrix") {
    MatrixXd at = assemble_a(p, h);
    std::vector<BlockSystem> systems{{VectorXi(0), at, VectorXd::Zero(2)}};
    auto rec = recover_global(systems, 2, 0);
    REQUIRE((rec.a - at).cwiseAbs().maxCoeff() < 1e-13);
  }
  SECTION("inconsistent inputs are solved in least squares with residual") {
    std::vector<BlockSystem> systems;
    for (auto [u1, u2] :
         {std::pair{0, 0}, std::pair{1, 0}, std::pair{0, 1}, std::pair{1, 1}}) {
      VectorXi u(2);
      u << u1, u2;
      auto [at, ct] = assemble_block_system(p, h, u);
      systems.push_back({u, at, ct});
    }
    systems[3].a_tilde(0, 0) += 0.05;  // break consistency
    auto rec = recover_global(systems, 2, 2);
    REQUIRE(rec.residual > 1e-3);
  }
  SECTION("confounded stimulus set rejected") {
    std::vector<BlockSystem> systems;
    for (int k = 0; k < 3; ++k) {
      VectorXi u(2);
      u << 1, 0;  // all identical
      auto [at, ct] = assemble_block_system(p, h, u);
      systems.push_back({u, at, ct});
    }
    REQUIRE_THROWS_AS(recover_global(systems, 2, 2), a2_violation);
  }
}

TEST_CASE("recover_initial") {
  SECTION("drift-free rest gives back z(r)") {
    VectorXd zr(2);
    zr << 0.4, -0.2;
    VectorXd s = recover_initial(zr, MatrixXd::Zero(2, 2), VectorXd::Zero(2), 2.0);
    REQUIRE((s - zr).cwiseAbs().maxCoeff() < 1e-14);
  }
  SECTION("round trip with affine_step") {
    Rng rng(71);
    for (int rep = 0; rep < 10; ++rep) {
      MatrixXd a = oracles::random_matrix(rng, 3, 0.5);
      VectorXd c = oracles::random_vector(rng, 3, 0.5);
      VectorXd s = oracles::random_vector(rng, 3, 0.5);
      VectorXd zr = affine_step(s, a, c, 2.0);
      REQUIRE((recover_initial(zr, a, c, 2.0) - s).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  SECTION("simple model initial state from noiseless z(r)") {
    auto [h, p] = simple_model_truth();
    auto design = benchmark_design();
    MatrixXd z = neural_trajectory(p, h, design);
    // prescan_rest: [0, r) runs under (A, 0).
    VectorXd s = recover_initial(z.row(1).transpose(), assemble_a(p, h),
                                 VectorXd::Zero(2), design.r);
    REQUIRE((s - p.s_star).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("deconvolve") {
  Rng rng(73);
  // Round-trip accuracy is limited by the conditioning of the sampled
  // kernel: exact for any n at r = 3.22 (minimum-phase), short-horizon
  // only at r = 2 where h rises from near zero.
  SECTION("round trip at r = 3.22 over a long scan") {
    const int n = 360;
    VectorXd hker = hrf_kernel(3.22, n);
    MatrixXd z(n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2; ++j) z(i, j) = rng.normal();
    MatrixXd back = deconvolve(convolve(z, hker), hker);
    REQUIRE((back - z).cwiseAbs().maxCoeff() < 1e-10);
  }
  SECTION("round trip at r = 2 within the stable horizon") {
    const int n = 12;
    VectorXd hker = hrf_kernel(2.0, n);
    MatrixXd z(n, 2);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 2; ++j) z(i, j) = rng.normal();
    MatrixXd back = deconvolve(convolve(z, hker), hker);
    REQUIRE((back - z).cwiseAbs().maxCoeff() < 1e-10);
  }
  SECTION("zero means zero states") {
    VectorXd hker = hrf_kernel(2.0, 60);
    REQUIRE(deconvolve(MatrixXd::Zero(60, 3), hker).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("admissible at r = 2") {
    REQUIRE(std::abs(hrf_kernel(2.0, 4)(1)) > 1e-12);
  }
  SECTION("vanishing kernel head rejected") {
    VectorXd bad = hrf_kernel(2.0, 60);
    bad(1) = 0.0;
    REQUIRE_THROWS_AS(deconvolve(MatrixXd::Zero(60, 1), bad),
                      non_injective_observation);
  }
}

TEST_CASE("end-to-end Theorem 1 recovery on the simple model") {
  auto [h, p] = simple_model_truth();
  auto design = benchmark_design();
  MatrixXd z = neural_trajectory(p, h, design);
  auto rec = recover_from_latent(z, design, h.m);

  REQUIRE((rec.global.a - assemble_a(p, h)).cwiseAbs().maxCoeff() < 1e-7);
  REQUIRE(rec.global.b[1](0, 1) == Approx(-0.2).epsilon(1e-6));
  REQUIRE(rec.global.c(0, 0) == Approx(0.7).epsilon(1e-6));
  REQUIRE((rec.s_star - p.s_star).cwiseAbs().maxCoeff() < 1e-7);
}

TEST_CASE("stimulus relabeling permutes the recovered system") {
  auto [h, p] = simple_model_truth();
  auto design = benchmark_design();
  MatrixXd z = neural_trajectory(p, h, design);
  auto rec = recover_from_latent(z, design, h.m);

  // Swap stimulus labels in the design; the same latent data now attribute
  // the blocks to permuted inputs.
  StimulusDesign swapped = design;
  MatrixXi u2 = design.u;
  u2.col(0).swap(u2.col(1));
  swapped = block_partition(u2, design.r, design.prescan_rest);
  auto rec2 = recover_from_latent(z, swapped, h.m);

  REQUIRE((rec2.global.a - rec.global.a).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((rec2.global.b[0] - rec.global.b[1]).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((rec2.global.b[1] - rec.global.b[0]).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((rec2.global.c.col(0) - rec.global.c.col(1)).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((rec2.global.c.col(1) - rec.global.c.col(0)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Theorem 2 round trip survives the full observation map") {
  // Motion-task TR (3.22 s), where the sampled kernel is stably invertible
  // over the whole scan.
  auto [h, p] = simple_model_truth();
  MatrixXi u = MatrixXi::Zero(150, 2);
  for (int b = 0; b * 10 < 150; ++b)
    for (int j = b * 10; j < (b + 1) * 10 && j < 150; ++j) {
      if (b % 4 == 1) u(j, 0) = 1;
      if (b % 4 == 3) u(j, 1) = 1;
    }
  auto design = block_partition(u, 3.22);
  const int n = design.n();
  MatrixXd z = neural_trajectory(p, h, design);
  VectorXd hker = hrf_kernel(design.r, n);
  MatrixXd mu = convolve(z, hker);
  MatrixXd zback = deconvolve(mu, hker);
  REQUIRE((zback - z).cwiseAbs().maxCoeff() < 1e-10);
}
