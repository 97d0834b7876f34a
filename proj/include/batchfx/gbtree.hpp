#pragma once

// Gradient-boosted regression trees with squared loss.

#include "batchfx/core.hpp"

#include <vector>

namespace batchfx {

struct TreeParams {
    int n_trees = 50;
    int max_depth = 3;
    double learning_rate = 0.1;
    double subsample = 1.0;  ///< fraction of rows drawn (without replacement) per tree
    int min_leaf = 2;

    void validate() const;
};

class RegressionTree {
public:
    struct Node {
        int feature = -1;  ///< -1 marks a leaf
        double threshold = 0.0;
        int left = -1;
        int right = -1;
        double value = 0.0;
    };

    /// Fits residuals r on the given rows by greedy variance reduction.
    static RegressionTree fit(const Matrix& x, const Vector& r, const std::vector<Eigen::Index>& rows,
                              int max_depth, int min_leaf);

    double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    const std::vector<Node>& nodes() const noexcept { return nodes_; }

private:
    int grow(const Matrix& x, const Vector& r, std::vector<Eigen::Index>& rows, int depth,
             int max_depth, int min_leaf);
    std::vector<Node> nodes_;
};

class GradientBoostedTrees {
public:
    GradientBoostedTrees() = default;

    static GradientBoostedTrees fit(const Matrix& x, const Vector& y, const TreeParams& params,
                                    const RngStream& rng);

    double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    Vector predict_all(const Matrix& x) const;

    double base() const noexcept { return base_; }
    const std::vector<RegressionTree>& trees() const noexcept { return trees_; }
    const TreeParams& params() const noexcept { return params_; }

private:
    double base_ = 0.0;
    TreeParams params_;
    std::vector<RegressionTree> trees_;
};

}  // namespace batchfx
