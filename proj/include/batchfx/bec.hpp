#pragma once

// QC-anchored batch-effect correction: per-variable drift regression inside
// each batch, and ratio-A alignment of QC medians across batches.

#include "batchfx/core.hpp"
#include "batchfx/gbtree.hpp"

#include <string>
#include <vector>

namespace batchfx {

enum class RegressorKind { GBTree };

std::string to_string(RegressorKind kind);

struct RegressorSpec {
    RegressorKind kind = RegressorKind::GBTree;
    int n_trees = 50;
    int max_depth = 3;
    double learning_rate = 0.1;
    double subsample = 1.0;
    int n_correlated = 10;
    int cv_folds = 5;
    /// Grid points evaluated by cross-validation: the configured values above
    /// plus grid_size - 1 others drawn from the 27-point grid.
    int grid_size = 6;
    RngStream rng{};

    void validate() const;
};

/// Indices (excluding i) of the k variables with the largest absolute
/// Pearson correlation to variable i; ties go to the lower index. Constant
/// companion variables count as uncorrelated.
std::vector<Eigen::Index> top_correlated(const Matrix& x_qc, Eigen::Index i, int k);

struct VariableFit {
    GradientBoostedTrees model;
    std::vector<Eigen::Index> features;  ///< correlated variables after the injection order
    TreeParams chosen;
    double cv_loss = 0.0;  ///< mean squared error across folds for the chosen settings
};

struct CorrectionModel {
    std::vector<std::string> batches;
    /// fits[b][i]: batch b, variable i.
    std::vector<std::vector<VariableFit>> fits;
    Vector reference_level;  ///< median of each variable over all QC rows

    const VariableFit& fit(const std::string& batch, Eigen::Index variable) const;
};

/// Fits the drift model batch by batch on QC rows only.
CorrectionModel fit_intra(const BatchedDataset& dataset, const RegressorSpec& spec,
                          unsigned threads = 0);

struct IntraResult {
    BatchedDataset data;
    long floored = 0;  ///< predictions raised to the floor
    long predictions = 0;
    std::vector<std::string> warnings;
};

/// raw * reference / max(prediction, 1e-3 * reference) for every row.
IntraResult apply_intra(const BatchedDataset& dataset, const CorrectionModel& model);

/// g[b, i] = mean over batches of the QC medians of variable i divided by
/// batch b's QC median.
Matrix ratio_a_factors(const BatchedDataset& dataset);

BatchedDataset ratio_a_correct(const BatchedDataset& dataset);

}  // namespace batchfx
