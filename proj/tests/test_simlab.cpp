#include <doctest.h>

#include "batchfx/simlab.hpp"
#include "support.hpp"

#include <cmath>

using namespace batchfx;

namespace {

double rate_of(Scenario s, TestMethod m, int n1, int n2, int p, int reps, std::uint64_t seed) {
    return empirical_rate(ScenarioSpec::preset(s, n1, n2, p, reps, RngStream(seed)), m).rate(m).rejection_rate;
}

}  // namespace

TEST_CASE("scenario presets") {
    const ScenarioSpec h0 = ScenarioSpec::preset(Scenario::H0, 10, 10, 100, 5, RngStream(1));
    CHECK(h0.pct == 0.0);
    CHECK(h0.eta == 0.0);
    CHECK(h0.rho1 == 0.0);
    CHECK(h0.rho2 == 0.0);
    const ScenarioSpec both = ScenarioSpec::preset(Scenario::HmHc, 10, 10, 100, 5, RngStream(1));
    CHECK(both.pct == 0.05);
    CHECK(both.eta == 0.3);
    CHECK(both.rho1 == 0.3);
    CHECK(both.rho2 == -0.3);

    ScenarioSpec bad = h0;
    bad.rho1 = 0.2;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    bad = h0;
    bad.n1 = 2;
    CHECK_THROWS_AS(bad.validate(), DomainError);
    CHECK(parse_scenario("HmHc") == Scenario::HmHc);
    CHECK_THROWS_AS(parse_scenario("H9"), DomainError);
}

TEST_CASE("population generator") {
    ScenarioSpec h0 = ScenarioSpec::preset(Scenario::H0, 10, 10, 40, 5, RngStream(2));
    h0.null_model = NullModel::Generator;
    const PopulationPair n = gen_population_pair(h0, RngStream(3));
    CHECK(n.mu1 == n.mu2);
    CHECK(n.sigma1 == n.sigma2);
    CHECK(n.sigma1.isApprox(Matrix(n.sd.array().square().matrix().asDiagonal())));

    const ScenarioSpec hm = ScenarioSpec::preset(Scenario::Hm, 10, 10, 100, 5, RngStream(2));
    const PopulationPair m = gen_population_pair(hm, RngStream(4));
    for (Eigen::Index i = 1; i < 100; ++i) CHECK(m.mu1(i) <= m.mu1(i - 1));
    const double delta = std::sqrt(0.3 / 10.0);
    for (Eigen::Index i = 0; i < 100; ++i) {
        CHECK(m.mu2(i) - m.mu1(i) == doctest::Approx(i < 5 ? delta : 0.0));
        CHECK(m.sd(i) > 0.0);
        CHECK(m.sd(i) < 0.3 * m.mu1(i));
    }
    ScenarioSpec tiny = hm;
    tiny.p = 10;  // floor(0.05 * 10) = 0, still one shifted variable
    const PopulationPair t = gen_population_pair(tiny, RngStream(4));
    CHECK((t.mu2 - t.mu1).cwiseAbs().maxCoeff() > 0.0);
    CHECK((t.mu2 - t.mu1).tail(9).norm() == 0.0);

    const ScenarioSpec hc = ScenarioSpec::preset(Scenario::Hc, 10, 10, 50, 5, RngStream(2));
    const PopulationPair c = gen_population_pair(hc, RngStream(5));
    CHECK(c.sigma1(0, 1) == doctest::Approx(c.sd(0) * c.sd(1) * 0.3));
    CHECK(c.sigma2(0, 1) == doctest::Approx(-c.sd(0) * c.sd(1) * 0.3));
    CHECK(c.mu1 == c.mu2);
}

TEST_CASE("Monte Carlo results do not depend on the schedule") {
    const ScenarioSpec spec = ScenarioSpec::preset(Scenario::HmHc, 10, 10, 60, 64, RngStream(7));
    const TestMethod methods[] = {TestMethod::Yu_Fisher, TestMethod::HN, TestMethod::gPCA};
    ScenarioSpec s = spec;
    s.gpca_permutations = 50;
    const MonteCarloResult a = empirical_rates(s, methods, 1);
    const MonteCarloResult b = empirical_rates(s, methods, 4);
    for (auto m : methods) CHECK(a.rate(m).rejections == b.rate(m).rejections);
    CHECK(a.retries == b.retries);

    const MonteCarloResult one = empirical_rate(ScenarioSpec::preset(Scenario::H0, 10, 10, 30, 1, RngStream(1)), TestMethod::HN);
    CHECK((one.rate(TestMethod::HN).rejection_rate == 0.0 || one.rate(TestMethod::HN).rejection_rate == 1.0));
}

TEST_CASE("replicates draw the same samples for every method") {
    const ScenarioSpec spec = ScenarioSpec::preset(Scenario::Hc, 8, 9, 20, 3, RngStream(9));
    const auto [a1, a2] = draw_replicate(spec, spec.rng.substream(2));
    const auto [b1, b2] = draw_replicate(spec, spec.rng.substream(2));
    CHECK(a1 == b1);
    CHECK(a2 == b2);
    CHECK(a1.rows() == 8);
    CHECK(a2.rows() == 9);
}

TEST_CASE("size calibration at 1000 replicates") {
    for (auto m : {TestMethod::HN, TestMethod::Yu_Fisher, TestMethod::Yu_Cauchy}) {
        for (int n : {10, 20}) {
            const double r = rate_of(Scenario::H0, m, n, n, 100, 1000, 100 + static_cast<std::uint64_t>(n));
            INFO(to_string(m), " n=", n, " rate=", r);
            CHECK(r >= 0.03);
            CHECK(r <= 0.08);
        }
        const double r = rate_of(Scenario::H0, m, 10, 10, 250, 1000, 300);
        INFO(to_string(m), " p=250 rate=", r);
        CHECK(r >= 0.03);
        CHECK(r <= 0.09);
    }
}

TEST_CASE("component tests stay near the nominal level off their target") {
    const double cov_under_hm = rate_of(Scenario::Hm, TestMethod::LC_cov, 10, 10, 100, 1000, 41);
    const double mean_under_hc = rate_of(Scenario::Hc, TestMethod::CQ_mean, 10, 10, 100, 1000, 42);
    INFO("lc under Hm ", cov_under_hm, ", cq under Hc ", mean_under_hc);
    CHECK(cov_under_hm <= 0.10);
    CHECK(mean_under_hc <= 0.12);
}

TEST_CASE("power under both shifts is at least power under the covariance shift") {
    for (auto m : {TestMethod::HN, TestMethod::Yu_Fisher, TestMethod::Yu_Cauchy}) {
        const double both = rate_of(Scenario::HmHc, m, 10, 10, 100, 1000, 51);
        const double cov = rate_of(Scenario::Hc, m, 10, 10, 100, 1000, 51);
        INFO(to_string(m), " HmHc=", both, " Hc=", cov);
        CHECK(both >= cov - 0.05);
    }
}

TEST_CASE("batch-structured generators") {
    DriftDataSpec d;
    d.rng = RngStream(3);
    const BatchedDataset ds = make_drift_dataset(d);
    CHECK(ds.batches().size() == 3);
    CHECK(ds.n_features() == 40);
    CHECK(ds.n_samples() == 3 * (20 + 40));
    CHECK((ds.values().array() > 0.0).all());
    CHECK(make_drift_dataset(d).values() == ds.values());

    CovShiftSpec c;
    c.rng = RngStream(4);
    const BatchedDataset cs = make_cov_shift_dataset(c);
    CHECK(cs.batches().size() == 2);
    CHECK(cs.n_features() == 30);
    CHECK(cs.rows(cs.batches()[0], Role::QC).size() == 20);
    CHECK((cs.values().array() > 0.0).all());
}
