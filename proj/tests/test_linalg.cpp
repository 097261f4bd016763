#include <catch2/catch_amalgamated.hpp>
#include <cdcm/linalg.hpp>
#include <cdcm/rng.hpp>

#include "support/oracles.hpp"

using namespace cdcm;
using Catch::Approx;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("mat_exp basics") {
  SECTION("exp(0) = I") {
    REQUIRE((mat_exp(MatrixXd::Zero(2, 2)) - MatrixXd::Identity(2, 2))
                .cwiseAbs()
                .maxCoeff() < 1e-15);
  }
  SECTION("diagonal closed form") {
    MatrixXd m = (-0.55 * 2.0) * MatrixXd::Identity(2, 2);
    MatrixXd e = mat_exp(m);
    REQUIRE(e(0, 0) == Approx(std::exp(-1.1)).epsilon(1e-13));
    REQUIRE(e(1, 1) == Approx(std::exp(-1.1)).epsilon(1e-13));
    REQUIRE(std::abs(e(0, 1)) < 1e-15);
  }
  SECTION("nilpotent series truncates") {
    MatrixXd m(2, 2);
    m << 0, 1, 0, 0;
    MatrixXd e = mat_exp(m);
    MatrixXd want(2, 2);
    want << 1, 1, 0, 1;
    REQUIRE((e - want).cwiseAbs().maxCoeff() < 1e-15);
  }
  SECTION("matches 50-term Taylor series on random matrices") {
    Rng rng(11);
    for (int rep = 0; rep < 25; ++rep) {
      const int d = 2 + static_cast<int>(rng.uniform_below(5));
      MatrixXd m = oracles::random_matrix(rng, d, 0.5);
      m *= 2.0 / std::max(2.0, m.cwiseAbs().colwise().sum().maxCoeff());
      REQUIRE((mat_exp(m) - oracles::taylor_expm(m)).cwiseAbs().maxCoeff() < 1e-10);
    }
  }
  SECTION("non-finite input rejected") {
    MatrixXd m = MatrixXd::Zero(2, 2);
    m(0, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(mat_exp(m), invalid_input);
  }
}

TEST_CASE("mat_exp semigroup property") {
  Rng rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    const int d = 2 + static_cast<int>(rng.uniform_below(4));
    MatrixXd a = oracles::random_matrix(rng, d, 0.4);
    a *= 2.0 / std::max(2.0, a.cwiseAbs().colwise().sum().maxCoeff());
    const double s = 5.0 * rng.uniform();
    const double t = 5.0 * rng.uniform();
    MatrixXd lhs = mat_exp(a * (s + t));
    MatrixXd rhs = mat_exp(a * s) * mat_exp(a * t);
    REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("w_antideriv") {
  SECTION("A = 0 gives tI") {
    MatrixXd w = w_antideriv(3.5, MatrixXd::Zero(3, 3));
    REQUIRE((w - 3.5 * MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-13);
  }
  SECTION("diagonal closed form (e^a - 1)/a") {
    MatrixXd a = MatrixXd::Zero(2, 2);
    a(0, 0) = -0.7;
    a(1, 1) = 1.3;
    MatrixXd w = w_antideriv(1.0, a);
    REQUIRE(w(0, 0) == Approx((std::exp(-0.7) - 1.0) / -0.7).epsilon(1e-12));
    REQUIRE(w(1, 1) == Approx((std::exp(1.3) - 1.0) / 1.3).epsilon(1e-12));
  }
  SECTION("finite difference of t -> w(t;A) matches e^{tA}") {
    Rng rng(23);
    for (int rep = 0; rep < 10; ++rep) {
      MatrixXd a = oracles::random_matrix(rng, 3, 0.5);
      const double t = 0.5 + 2.0 * rng.uniform();
      const double h = 1e-5;
      MatrixXd fd = (w_antideriv(t + h, a) - w_antideriv(t - h, a)) / (2.0 * h);
      REQUIRE((fd - mat_exp(t * a)).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
  SECTION("identity I + A w(t;A) = e^{tA}, including singular A") {
    Rng rng(29);
    for (int rep = 0; rep < 10; ++rep) {
      MatrixXd a = oracles::random_matrix(rng, 3, 0.6);
      a.col(2) = a.col(0) + a.col(1);  // force singularity
      const double t = 3.0 * rng.uniform();
      MatrixXd lhs = MatrixXd::Identity(3, 3) + a * w_antideriv(t, a);
      REQUIRE((lhs - mat_exp(t * a)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  SECTION("negative t rejected") {
    REQUIRE_THROWS_AS(w_antideriv(-1.0, MatrixXd::Zero(2, 2)), invalid_input);
  }
  SECTION("matches the defining series") {
    Rng rng(31);
    MatrixXd a = oracles::random_matrix(rng, 4, 0.4);
    REQUIRE((w_antideriv(1.7, a) - oracles::series_w(1.7, a)).cwiseAbs().maxCoeff() <
            1e-11);
  }
}

TEST_CASE("affine_step") {
  SECTION("c = 0 reduces to the linear flow") {
    Rng rng(37);
    MatrixXd a = oracles::random_matrix(rng, 3, 0.5);
    VectorXd z0 = oracles::random_vector(rng, 3, 1.0);
    VectorXd got = affine_step(z0, a, VectorXd::Zero(3), 1.3);
    REQUIRE((got - mat_exp(1.3 * a) * z0).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("A = 0 reduces to drift") {
    VectorXd z0(2), c(2);
    z0 << 1.0, -2.0;
    c << 0.5, 0.25;
    VectorXd got = affine_step(z0, MatrixXd::Zero(2, 2), c, 2.0);
    REQUIRE((got - (z0 + 2.0 * c)).cwiseAbs().maxCoeff() < 1e-13);
  }
  SECTION("scalar closed form c(e^{a tau} - 1)/a") {
    VectorXd z0(1), c(1);
    z0 << 0.0;
    c << 0.7;
    MatrixXd a(1, 1);
    a << -0.5;
    VectorXd got = affine_step(z0, a, c, 2.0);
    REQUIRE(got(0) == Approx(0.884969).margin(1e-6));
    REQUIRE(got(0) == Approx(0.7 * (std::exp(-1.0) - 1.0) / -0.5).epsilon(1e-12));
  }
  SECTION("matches adaptive RK integration") {
    Rng rng(41);
    for (int rep = 0; rep < 10; ++rep) {
      const int d = 2 + static_cast<int>(rng.uniform_below(4));
      MatrixXd a = oracles::random_matrix(rng, d, 0.5);
      VectorXd c = oracles::random_vector(rng, d, 0.7);
      VectorXd z0 = oracles::random_vector(rng, d, 1.0);
      const double tau = 0.2 + 2.0 * rng.uniform();
      VectorXd got = affine_step(z0, a, c, tau);
      VectorXd want = oracles::rk_affine_step(z0, a, c, tau);
      REQUIRE((got - want).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  SECTION("composition: tau1 then tau2 equals tau1 + tau2") {
    Rng rng(43);
    for (int rep = 0; rep < 10; ++rep) {
      MatrixXd a = oracles::random_matrix(rng, 3, 0.5);
      VectorXd c = oracles::random_vector(rng, 3, 0.5);
      VectorXd z0 = oracles::random_vector(rng, 3, 1.0);
      const double t1 = 2.0 * rng.uniform(), t2 = 2.0 * rng.uniform();
      VectorXd two = affine_step(affine_step(z0, a, c, t1), a, c, t2);
      VectorXd one = affine_step(z0, a, c, t1 + t2);
      REQUIRE((two - one).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
  SECTION("fixed point stays fixed") {
    Rng rng(47);
    MatrixXd a = oracles::random_matrix(rng, 3, 0.8);
    a -= 2.0 * MatrixXd::Identity(3, 3);  // keep it invertible
    VectorXd zstar = oracles::random_vector(rng, 3, 1.0);
    VectorXd c = -a * zstar;
    VectorXd got = affine_step(zstar, a, c, 4.0);
    REQUIRE((got - zstar).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("mat_log_real") {
  SECTION("log(I) = 0") {
    REQUIRE(mat_log_real(MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("diagonal closed form") {
    MatrixXd phi = MatrixXd::Zero(2, 2);
    phi(0, 0) = std::exp(-1.1);
    phi(1, 1) = std::exp(-0.2);
    MatrixXd l = mat_log_real(phi);
    REQUIRE(l(0, 0) == Approx(-1.1).epsilon(1e-12));
    REQUIRE(l(1, 1) == Approx(-0.2).epsilon(1e-12));
  }
  SECTION("round trip log(exp(A)) = A for distinct real spectra") {
    Rng rng(53);
    int done = 0;
    while (done < 15) {
      const int d = 2 + static_cast<int>(rng.uniform_below(4));
      MatrixXd a = oracles::random_matrix(rng, d, 0.5);
      Eigen::EigenSolver<MatrixXd> es(a);
      bool real_distinct = true;
      for (int i = 0; i < d && real_distinct; ++i) {
        if (std::abs(es.eigenvalues()(i).imag()) > 1e-12) real_distinct = false;
        for (int j = i + 1; j < d; ++j)
          if (std::abs(es.eigenvalues()(i).real() - es.eigenvalues()(j).real()) < 1e-2)
            real_distinct = false;
      }
      if (!real_distinct) continue;
      ++done;
      MatrixXd back = mat_log_real(mat_exp(a));
      REQUIRE((back - a).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
  SECTION("negative eigenvalue rejected") {
    MatrixXd phi = MatrixXd::Zero(2, 2);
    phi(0, 0) = -0.3;
    phi(1, 1) = 0.5;
    REQUIRE_THROWS_AS(mat_log_real(phi), not_real_log_identifiable);
  }
  SECTION("complex spectrum rejected") {
    MatrixXd phi(2, 2);
    phi << 0, -1, 1, 0;  // rotation generator: eigenvalues +-i
    REQUIRE_THROWS_AS(mat_log_real(phi), not_real_log_identifiable);
  }
  SECTION("defective repeated eigenvalue rejected") {
    MatrixXd phi(2, 2);
    phi << 1, 1, 0, 1;  // single Jordan block, no eigendecomposition route
    REQUIRE_THROWS_AS(mat_log_real(phi), not_real_log_identifiable);
  }
  SECTION("benign repeated spectrum takes the principal branch") {
    MatrixXd l = mat_log_real(2.0 * MatrixXd::Identity(3, 3));
    REQUIRE((l - std::log(2.0) * MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <
            1e-12);
  }
}

TEST_CASE("mat_exp_frechet") {
  Rng rng(59);
  SECTION("matches central differences") {
    for (int rep = 0; rep < 10; ++rep) {
      MatrixXd m = oracles::random_matrix(rng, 3, 0.6);
      MatrixXd e = oracles::random_matrix(rng, 3, 1.0);
      const double h = 1e-6;
      MatrixXd fd = (mat_exp(m + h * e) - mat_exp(m - h * e)) / (2.0 * h);
      REQUIRE((mat_exp_frechet(m, e) - fd).cwiseAbs().maxCoeff() < 1e-7);
    }
  }
  SECTION("adjoint identity <G, L(M,E)> = <L(M^T,G), E>") {
    for (int rep = 0; rep < 10; ++rep) {
      MatrixXd m = oracles::random_matrix(rng, 4, 0.5);
      MatrixXd e = oracles::random_matrix(rng, 4, 1.0);
      MatrixXd g = oracles::random_matrix(rng, 4, 1.0);
      const double lhs = (g.array() * mat_exp_frechet(m, e).array()).sum();
      const double rhs = (mat_exp_frechet(m.transpose(), g).array() * e.array()).sum();
      REQUIRE(lhs == Approx(rhs).epsilon(1e-9));
    }
  }
}
