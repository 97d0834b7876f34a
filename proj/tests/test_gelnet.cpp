#include <doctest.h>

#include "batchfx/gelnet.hpp"
#include "oracles.hpp"
#include "support.hpp"

#include <cmath>

using namespace batchfx;
using testsupport::random_matrix;

namespace {

// MLE covariance of n standard-normal-ish rows through a random mixing.
Matrix sample_cov(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
    const Matrix mix = Matrix::Identity(p, p) + 0.3 * random_matrix(p, p, seed + 1);
    const Matrix x = random_matrix(n, p, seed) * mix;
    return empirical_cov(mean_center(x).values, Denominator::N);
}

GelnetConfig config(double alpha, double lambda) {
    GelnetConfig c;
    c.alpha = alpha;
    c.lambda = lambda;
    return c;
}

}  // namespace

TEST_CASE("gelnet objective hand values") {
    const Matrix eye2 = Matrix::Identity(2, 2);
    for (double a : {0.0, 0.3, 1.0}) {
        CHECK(gelnet_objective(SpdMatrix::identity(3), Matrix::Identity(3, 3), config(a, 2.0)) ==
              doctest::Approx(3.0));
    }
    CHECK(gelnet_objective(Matrix(2.0 * eye2), eye2, config(0.0, 1.0)) ==
          doctest::Approx(-2 * std::log(2.0) + 4 + 1).epsilon(1e-12));
    CHECK(gelnet_objective(Matrix(2.0 * eye2), eye2, config(0.0, 1.0)) == doctest::Approx(3.6137).epsilon(1e-4));
    GelnetConfig zero_target = config(1.0, 0.5);
    zero_target.target = Matrix::Zero(3, 3);
    CHECK(gelnet_objective(SpdMatrix::identity(3), Matrix::Identity(3, 3), zero_target) ==
          doctest::Approx(4.5));
    Matrix not_pd(2, 2);
    not_pd << 1, 2, 2, 1;
    CHECK_THROWS(gelnet_objective(not_pd, eye2, config(0.5, 1.0)));
}

TEST_CASE("ridge closed form") {
    const PrecisionEstimate fixed = ridge_closed_form(Matrix::Identity(3, 3), 0.7, 1.0);
    CHECK((fixed.theta.entries() - Matrix::Identity(3, 3)).norm() < 1e-12);

    const PrecisionEstimate two = ridge_closed_form(Matrix::Identity(1, 1) * 2.0, 1.0, 0.0);
    CHECK(two.theta.entries()(0, 0) == doctest::Approx((-2 + std::sqrt(8.0)) / 2).epsilon(1e-12));
    CHECK(two.theta.entries()(0, 0) == doctest::Approx(0.41421).epsilon(1e-5));

    const PrecisionEstimate zero = ridge_closed_form(Matrix::Zero(2, 2), 4.0, 0.0);
    CHECK((zero.theta.entries() - 0.5 * Matrix::Identity(2, 2)).norm() < 1e-12);
}

TEST_CASE("ridge closed form satisfies the stationarity equation") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Matrix s = sample_cov(8, 12, seed);
        const double lambda = 0.05 + 0.4 * static_cast<double>(seed);
        const double tau = 0.5 * static_cast<double>(seed % 3);
        const Matrix th = ridge_closed_form(s, lambda, tau).theta.entries();
        const Matrix grad = -th.inverse() + s + lambda * (th - tau * Matrix::Identity(12, 12));
        CHECK(grad.cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("alpha = 0 reproduces the ridge closed form") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const Eigen::Index p = 2 + static_cast<Eigen::Index>(seed % 29);
        const Eigen::Index n = 3 + static_cast<Eigen::Index>((seed * 7) % 40);
        const Matrix s = sample_cov(n, p, 300 + seed);
        const double lambda = 0.01 + 0.2 * static_cast<double>(seed % 50);
        const PrecisionEstimate est = gelnet_estimate(s, config(0.0, lambda));
        const PrecisionEstimate ref = ridge_closed_form(s, lambda, 1.0);
        REQUIRE((est.theta.entries() - ref.theta.entries()).norm() < 1e-6);
        REQUIRE((est.theta.entries() - oracles::ridge_identity_target(s, lambda)).norm() < 1e-6);
    }
}

TEST_CASE("large penalty pulls theta to the identity target") {
    Matrix s = sample_cov(20, 10, 5);
    const Vector d = s.diagonal().cwiseSqrt().cwiseInverse();
    s = d.asDiagonal() * s * d.asDiagonal();
    const Matrix eye = Matrix::Identity(10, 10);
    // alpha * lambda >= max |S_ij| puts the identity inside the subgradient.
    for (double alpha : {0.2, 0.5, 1.0}) {
        const PrecisionEstimate est = gelnet_estimate(s, config(alpha, 9.9));
        CHECK((est.theta.entries() - eye).norm() < 1e-6);
    }
    // Pure ridge: Theta - I ~ -(S - I) / (1 + lambda) to first order.
    const PrecisionEstimate ridge = gelnet_estimate(s, config(0.0, 9.9));
    const double first_order = (s - eye).norm() / 10.9;
    CHECK((ridge.theta.entries() - eye).norm() == doctest::Approx(first_order).epsilon(0.1));
    const Matrix near_eye = 0.9 * eye + 0.1 * s;
    CHECK((gelnet_estimate(near_eye, config(0.0, 9.9)).theta.entries() - eye).norm() < 0.05);
}

TEST_CASE("2x2 solution beats a brute-force grid") {
    Matrix s(2, 2);
    s << 1, 0.5, 0.5, 1;
    const PrecisionEstimate est = gelnet_estimate(s, config(0.5, 1.0));
    const auto grid = oracles::grid_minimize_2x2(s, Matrix::Identity(2, 2), 0.5, 1.0);
    CHECK(est.objective <= grid.value + 1e-4);
    CHECK(est.objective == doctest::Approx(gelnet_objective(est.theta, s, config(0.5, 1.0))));
    CHECK(std::abs(est.theta.entries()(0, 0) - grid.a) < 1e-3);
    CHECK(std::abs(est.theta.entries()(0, 1) - grid.b) < 1e-3);
}

TEST_CASE("local minimum certificate under random perturbations") {
    auto eng = RngStream(99).engine();
    std::normal_distribution<double> z(0.0, 1.0);
    for (std::uint64_t inst = 0; inst < 6; ++inst) {
        const Eigen::Index p = 3 + static_cast<Eigen::Index>(inst * 3);
        const Matrix s = sample_cov(p + 5, p, 700 + inst);
        const GelnetConfig cfg = config(0.2 + 0.15 * static_cast<double>(inst), 0.3 + 0.5 * static_cast<double>(inst));
        const PrecisionEstimate est = gelnet_estimate(s, cfg);
        const Matrix& th = est.theta.entries();
        for (int k = 0; k < 1000; ++k) {
            Matrix e(p, p);
            for (Eigen::Index i = 0; i < p; ++i)
                for (Eigen::Index j = 0; j <= i; ++j) e(i, j) = e(j, i) = z(eng);
            const double scale = (k % 3 == 0 ? 1e-2 : k % 3 == 1 ? 1e-3 : 1e-4) / e.norm();
            const Matrix cand = th + scale * e;
            if (Eigen::LLT<Matrix>(cand).info() != Eigen::Success) continue;
            REQUIRE(est.objective <= gelnet_objective(cand, s, cfg) + 1e-6);
        }
    }
}

TEST_CASE("vanishing penalty inverts S") {
    const Matrix s = sample_cov(400, 6, 12);
    const PrecisionEstimate est = gelnet_estimate(s, config(0.5, 1e-8));
    CHECK((est.theta.entries() - s.inverse()).norm() < 1e-4);
}

TEST_CASE("converged runs are positive definite with small KKT residual") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const Eigen::Index p = 5 + static_cast<Eigen::Index>(seed % 20);
        const Eigen::Index n = seed % 2 ? p / 2 + 1 : 2 * p;  // rank-deficient every other run
        const Matrix s = sample_cov(n, p, 900 + seed);
        const GelnetConfig cfg = config(static_cast<double>(seed % 11) / 10.0, 0.05 + 0.3 * static_cast<double>(seed % 7));
        const PrecisionEstimate est = gelnet_estimate(s, cfg);
        REQUIRE(est.theta.eigen_floor() > 0.0);
        REQUIRE(est.kkt_residual <= 10 * cfg.tol);
        REQUIRE(gelnet_kkt_residual(est.theta.entries(), s, cfg) <= 10 * cfg.tol);
        REQUIRE(!est.objective_trace.empty());
        for (std::size_t k = 1; k < est.objective_trace.size(); ++k) {
            REQUIRE(est.objective_trace[k] <= est.objective_trace[k - 1]);
        }
        CHECK(est.objective_trace.back() == doctest::Approx(est.objective));
    }
}

TEST_CASE("gelnet with a custom target") {
    const Matrix s = sample_cov(30, 5, 41);
    GelnetConfig cfg = config(0.6, 5.0);
    cfg.target = 2.0 * Matrix::Identity(5, 5);
    cfg.target(0, 1) = cfg.target(1, 0) = 0.4;
    const PrecisionEstimate est = gelnet_estimate(s, cfg);
    CHECK(est.kkt_residual <= 10 * cfg.tol);
    const PrecisionEstimate loose = gelnet_estimate(s, config(0.6, 5.0));
    CHECK((est.theta.entries() - cfg.target).norm() < (loose.theta.entries() - cfg.target).norm());
}

TEST_CASE("gelnet input contracts") {
    const Matrix s = Matrix::Identity(3, 3);
    CHECK_THROWS_AS(gelnet_estimate(s, config(1.5, 1.0)), DomainError);
    CHECK_THROWS_AS(gelnet_estimate(s, config(0.5, 0.0)), DomainError);
    GelnetConfig bad_target = config(0.5, 1.0);
    bad_target.target = Matrix::Identity(2, 2);
    CHECK_THROWS_AS(gelnet_estimate(s, bad_target), DimensionError);
    bad_target.target = Matrix::Identity(3, 3);
    bad_target.target(0, 2) = 0.5;
    CHECK_THROWS_AS(gelnet_estimate(s, bad_target), DomainError);
    CHECK_THROWS_AS(gelnet_estimate(Matrix::Identity(3, 2), config(0.5, 1.0)), DimensionError);
}

TEST_CASE("iteration cap raises NonConvergenceError") {
    const Matrix s = sample_cov(6, 25, 3);
    GelnetConfig cfg = config(0.9, 0.02);
    cfg.max_iter = 1;
    cfg.tol = 1e-12;
    try {
        gelnet_estimate(s, cfg);
        FAIL("expected NonConvergenceError");
    } catch (const NonConvergenceError& e) {
        CHECK(e.iterations() == 1);
        CHECK(e.residual() > 0.0);
        CHECK(e.last_iterate().rows() == 25);
    }
}
