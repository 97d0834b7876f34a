#pragma once

// High-dimensional two-sample homogeneity tests and the pairwise QC
// simultaneous-testing procedure.

#include "batchfx/core.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace batchfx {

enum class TestMethod { CQ_mean, LC_cov, HN, HN_mean, HN_cov, Yu_Fisher, Yu_Cauchy, gPCA };

/// Method choice for simultaneous tests; Auto picks Yu-Fisher when
/// mean{n1, n2} >= 10 and HN otherwise.
enum class SimultaneousMethod { Auto, HN, Yu_Fisher, Yu_Cauchy };

std::string to_string(TestMethod m);
std::string to_string(SimultaneousMethod m);
TestMethod parse_test_method(const std::string& name);
SimultaneousMethod parse_simultaneous_method(const std::string& name);

struct TestOutcome {
    double statistic = 0.0;
    double p_value = 1.0;
    TestMethod method = TestMethod::CQ_mean;
    /// (p_mean, p_cov); present exactly for simultaneous combinations.
    std::optional<std::pair<double, double>> component_p;
};

/// Unbiased U-statistic pieces computed from Gram matrices. Exposed so the
/// tests can compare them with brute-force index sums.
namespace ustat {
/// sum_{i != j} x_i'x_j / (n (n-1)); unbiased for |mu|^2.
double mean_norm_sq(const Matrix& gram);
/// Unbiased estimator of tr(Sigma^2) (order-4 U-statistic, n >= 4).
double trace_sq(const Matrix& gram);
/// Unbiased estimator of tr(Sigma1 Sigma2) from the cross Gram X1 X2^T
/// (n1, n2 >= 2).
double cross_trace(const Matrix& cross);
/// Leave-two-out estimator of tr(Sigma^2) (n >= 3).
double trace_sq_loo(const Matrix& gram);
/// Leave-one-out estimator of tr(Sigma1 Sigma2) (n1, n2 >= 2).
double cross_trace_loo(const Matrix& cross);
}  // namespace ustat

/// Mean-vector homogeneity test based on the U-statistic estimate of
/// |mu1 - mu2|^2, standardized by trace estimates; one-sided normal p-value.
TestOutcome cq_mean_test(const Matrix& x1, const Matrix& x2);

/// Covariance homogeneity test based on the U-statistic estimate of
/// tr((Sigma1 - Sigma2)^2); one-sided normal p-value. Needs n1, n2 >= 3.
TestOutcome lc_cov_test(const Matrix& x1, const Matrix& x2);

/// HN components: the same distance estimators with every trace in the
/// variance replaced by its order-4 U-statistic and the covariance variance
/// taken at its exact leading finite-sample form.
TestOutcome hn_mean_test(const Matrix& x1, const Matrix& x2);
TestOutcome hn_cov_test(const Matrix& x1, const Matrix& x2);

/// Sum of the standardized HN mean and covariance distances, scaled to a
/// unit-variance null; one-sided normal p-value.
TestOutcome hn_simultaneous(const Matrix& x1, const Matrix& x2);

struct CombinedP {
    double p = 1.0;
    bool clamped = false;
};

/// Fisher: upper tail of chi^2_4 at -2 (ln p_mean + ln p_cov). Zero inputs
/// are clamped to 1e-300 and flagged.
CombinedP combine_fisher(double p_mean, double p_cov);

/// Cauchy: 1/2 - arctan(C)/pi with C the mean of tan((0.5 - p) pi).
/// Inputs are clamped into [1e-15, 1 - 1e-15] and flagged.
CombinedP combine_cauchy(double p_mean, double p_cov);

/// Auto rule: Yu-Fisher when (n1 + n2) / 2 >= 10, else HN.
SimultaneousMethod resolve_method(SimultaneousMethod m, Eigen::Index n1, Eigen::Index n2);

TestOutcome simultaneous_test(const Matrix& x1, const Matrix& x2,
                              SimultaneousMethod method = SimultaneousMethod::Auto);

/// Benjamini-Hochberg step-up q-values, in input order.
std::vector<double> bh_fdr(std::span<const double> p_values);

double normal_upper_tail(double z);

struct PairFollowup {
    double p_mean = 1.0;
    double p_cov = 1.0;
};

struct PairwiseReport {
    std::vector<std::string> batches;
    Matrix q_matrix;  ///< symmetric, NaN diagonal
    Matrix p_matrix;  ///< raw simultaneous p-values
    std::vector<std::vector<std::string>> method;  ///< method used per pair ("" on diagonal)
    std::map<std::pair<std::size_t, std::size_t>, PairFollowup> followup;  ///< i < j
    double alpha_sig = 0.05;

    bool any_significant() const;
};

/// Autoscale the pooled QC rows once, test every batch pair, BH-adjust the
/// simultaneous p-values and attach component p-values to significant pairs.
PairwiseReport qc_st(const BatchedDataset& dataset, double alpha_sig = 0.05,
                     SimultaneousMethod method = SimultaneousMethod::Auto, unsigned threads = 0);

/// Pairwise covariance layer only: lc_cov_test on the pooled-autoscaled QC
/// rows, BH-adjusted. Returns the B x B q-matrix (NaN diagonal).
Matrix qc_covariance_q(const BatchedDataset& dataset);
/// Same, from per-batch QC blocks given directly.
Matrix pairwise_cov_q(const std::vector<Matrix>& blocks);

}  // namespace batchfx
