#pragma once

// Synthetic population generators and the Monte Carlo size/power harness.

#include "batchfx/core.hpp"
#include "batchfx/hdtest.hpp"

#include <span>
#include <string>
#include <vector>

namespace batchfx {

enum class Scenario { H0, Hm, Hc, HmHc };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& name);

/// How H0 replicates are drawn: both groups N_p(0, I_p) (the size protocol)
/// or the mean/covariance generator with the null parameters.
enum class NullModel { StandardNormal, Generator };

struct ScenarioSpec {
    Scenario scenario = Scenario::H0;
    double pct = 0.0;
    double eta = 0.0;
    double rho1 = 0.0;
    double rho2 = 0.0;
    int n1 = 10;
    int n2 = 10;
    int p = 100;
    int reps = 1000;
    double alpha_sig = 0.05;
    RngStream rng{};
    NullModel null_model = NullModel::StandardNormal;
    int gpca_permutations = 1000;

    /// Parameters of the named scenario: Hm pct=5%, eta=0.3; Hc rho=(0.3,-0.3);
    /// HmHc both; H0 none.
    static ScenarioSpec preset(Scenario s, int n1, int n2, int p, int reps, RngStream rng);
    void validate() const;
};

struct PopulationPair {
    Vector mu1, mu2;
    Vector sd;          ///< per-variable standard deviations (D)
    Matrix sigma1, sigma2;
    Matrix corr1, corr2;  ///< R_1, R_2
};

/// mu ~ U(0,1) sorted descending; the first max{1, floor(pct p)} entries of
/// mu2 shifted by sqrt(eta / sqrt(p)); sd_i ~ U(0, 0.3 mu_i);
/// Sigma_j = D R_j D with AR(1) R_j.
PopulationPair gen_population_pair(const ScenarioSpec& spec, const RngStream& rng);

/// Two samples for one replicate, drawn as `spec` describes (including the H0
/// null model choice).
std::pair<Matrix, Matrix> draw_replicate(const ScenarioSpec& spec, const RngStream& rng);

struct MethodRate {
    TestMethod method;
    int rejections = 0;
    double rejection_rate = 0.0;
    double median_time_ms = 0.0;
};

struct MonteCarloResult {
    ScenarioSpec spec;
    int reps = 0;
    int retries = 0;  ///< replicates redrawn because of a degenerate column
    std::vector<MethodRate> per_method;

    const MethodRate& rate(TestMethod m) const;
};

/// Runs every method on the same replicate draws: sample X1, X2, autoscale
/// the pooled data, test, reject at alpha_sig. Replicate r uses
/// rng.substream(r); results do not depend on the thread count.
MonteCarloResult empirical_rates(const ScenarioSpec& spec, std::span<const TestMethod> methods,
                                 unsigned threads = 0);
MonteCarloResult empirical_rate(const ScenarioSpec& spec, TestMethod method, unsigned threads = 0);

/// p-value of one method on one pair of (already scaled) samples.
double run_method(TestMethod method, const Matrix& x1, const Matrix& x2, const RngStream& rng,
                  int gpca_permutations);

// ---------------------------------------------------------------------------
// Batch-structured synthetic data for the correction pipeline
// ---------------------------------------------------------------------------

struct DriftDataSpec {
    int batches = 3;
    int qc_per_batch = 20;
    int subjects_per_batch = 40;
    int p = 40;
    double qc_noise = 0.04;       ///< relative QC measurement noise
    double subject_spread = 0.25; ///< relative biological spread of subjects
    double max_drift = 0.5;       ///< |relative drift across a batch| <= max_drift
    double max_shift = 0.35;      ///< batch multiplicative offsets in [1 - s, 1 + s]
    RngStream rng{};
};

/// Positive intensities with per-batch multiplicative drift over injection
/// order and per-batch offsets. QC rows are interleaved every few injections.
BatchedDataset make_drift_dataset(const DriftDataSpec& spec);

/// Two-or-more batch dataset whose QC and subject rows follow N(mu, Sigma_j)
/// from the generator, shifted to keep intensities positive.
struct CovShiftSpec {
    int batches = 2;
    int qc_per_batch = 20;
    int subjects_per_batch = 20;
    int p = 30;
    double rho1 = 0.3;
    double rho2 = -0.3;
    double pct = 0.0;
    double eta = 0.0;
    RngStream rng{};
};
BatchedDataset make_cov_shift_dataset(const CovShiftSpec& spec);

}  // namespace batchfx
