#pragma once

// Covariance correction. Each batch's QC precision matrix is estimated with
// GELNET, and the batch is mapped by A_j = Theta_j^{1/2} Sigma~^{1/2} so that
// its covariance moves toward the size-weighted pooled covariance Sigma~.
// Hyperparameters are chosen by random search: a candidate is feasible when
// no pair of batches still differs in QC covariance, and among feasible
// candidates the one that inflates subject variances least wins.

#include "batchfx/core.hpp"
#include "batchfx/gelnet.hpp"

#include <optional>
#include <string>
#include <vector>

namespace batchfx {

struct CocoConfig {
    int n_search = 500;
    double alpha_min = 0.0;
    double alpha_max = 1.0;
    double lambda_min = 0.01;  ///< open lower end of (0, 10), realized by a floor
    double lambda_max = 10.0;
    std::vector<Matrix> targets;  ///< one per batch; empty means identity for all
    double alpha_sig = 0.05;
    RngStream rng{};
    double gelnet_tol = 1e-6;
    int gelnet_max_iter = 500;
    unsigned threads = 0;

    void validate() const;
};

struct CocoPlan {
    std::vector<std::string> batches;
    /// A_j in the pooled-QC-autoscaled coordinates the precision matrices
    /// were estimated in.
    std::vector<Matrix> A;
    /// Per-variable pooled QC standard deviations defining those coordinates;
    /// empty means the data are used as they are. Raw rows are mapped by
    /// D^{-1} A_j D.
    Vector scale;
    Vector alphas;
    Vector lambdas;
    Matrix V;  ///< batches x variables variance fold changes on subject rows
    double mean_V = 1.0;
    int candidates_passing = 0;
    int n_search = 0;
    int candidate = -1;       ///< index of the selected candidate
    Matrix q_after;           ///< pairwise QC covariance q-values after correction
    int gelnet_failures = 0;  ///< candidates dropped because a solve did not converge

    /// Smallest off-diagonal q in q_after (1 when unavailable).
    double min_q() const;
};

class NoFeasibleCandidateError : public std::runtime_error {
public:
    NoFeasibleCandidateError(const std::string& what, std::optional<CocoPlan> best)
        : std::runtime_error(what), best_(std::move(best)) {}
    /// Candidate whose smallest pairwise q came closest to passing.
    const std::optional<CocoPlan>& best() const noexcept { return best_; }

private:
    std::optional<CocoPlan> best_;
};

/// sum_j n_j Sigma_j / sum_j n_j.
SpdMatrix pooled_covariance(const std::vector<SpdMatrix>& sigmas, const std::vector<double>& n);

/// Theta^{1/2} Sigma~^{1/2}.
Matrix transformation_matrix(const SpdMatrix& theta, const SpdMatrix& sigma_pooled);
Matrix transformation_matrix(const PrecisionEstimate& theta, const SpdMatrix& sigma_pooled);

/// For every batch and role: center the rows, right-multiply by the batch's
/// map, add the mean back. Metadata are untouched.
BatchedDataset apply_coco(const BatchedDataset& dataset, const CocoPlan& plan);

struct FoldChange {
    Matrix V;
    double mean_V = 1.0;
};

/// Subject-row variance after / before, per batch and variable.
FoldChange variance_fold_change(const BatchedDataset& before, const BatchedDataset& after);

/// Plan for one fixed set of per-batch hyperparameters: GELNET on each batch's
/// centered QC rows (MLE covariance, pooled autoscaled coordinates), the A_j
/// maps, the corrected QC covariance q-values and the subject fold changes.
/// Throws NonConvergenceError if a solve fails.
CocoPlan coco_plan(const BatchedDataset& dataset, const Vector& alphas, const Vector& lambdas,
                   const CocoConfig& config);

/// Random search over n_search candidates; see the header comment.
CocoPlan coco_search(const BatchedDataset& dataset, const CocoConfig& config);

}  // namespace batchfx
