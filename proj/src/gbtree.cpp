#include "batchfx/gbtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace batchfx {

void TreeParams::validate() const {
    if (n_trees < 1) throw DomainError("gbtree: n_trees must be >= 1");
    if (max_depth < 0) throw DomainError("gbtree: max_depth must be >= 0");
    if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
        throw DomainError("gbtree: learning_rate must be in (0, 1]");
    }
    if (!(subsample > 0.0 && subsample <= 1.0)) throw DomainError("gbtree: subsample must be in (0, 1]");
    if (min_leaf < 1) throw DomainError("gbtree: min_leaf must be >= 1");
}

RegressionTree RegressionTree::fit(const Matrix& x, const Vector& r,
                                   const std::vector<Eigen::Index>& rows, int max_depth,
                                   int min_leaf) {
    RegressionTree tree;
    std::vector<Eigen::Index> work = rows;
    tree.grow(x, r, work, 0, max_depth, min_leaf);
    return tree;
}

int RegressionTree::grow(const Matrix& x, const Vector& r, std::vector<Eigen::Index>& rows,
                         int depth, int max_depth, int min_leaf) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    double total = 0.0;
    for (auto i : rows) total += r(i);
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{});
    nodes_[static_cast<std::size_t>(id)].value = n > 0 ? total / static_cast<double>(n) : 0.0;
    if (depth >= max_depth || n < 2 * min_leaf) return id;

    const double base_score = total * total / static_cast<double>(n);
    double best_gain = 0.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<Eigen::Index> order(rows);
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
        std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
            const double xa = x(a, f);
            const double xb = x(b, f);
            return xa < xb || (xa == xb && a < b);
        });
        double left = 0.0;
        for (Eigen::Index k = 0; k + 1 < n; ++k) {
            left += r(order[static_cast<std::size_t>(k)]);
            const Eigen::Index nl = k + 1;
            const Eigen::Index nr = n - nl;
            if (nl < min_leaf || nr < min_leaf) continue;
            const double xv = x(order[static_cast<std::size_t>(k)], f);
            const double xn = x(order[static_cast<std::size_t>(k + 1)], f);
            if (!(xn > xv)) continue;
            const double right = total - left;
            const double gain = left * left / static_cast<double>(nl) +
                                right * right / static_cast<double>(nr) - base_score;
            if (gain > best_gain) {
                best_gain = gain;
                best_feature = static_cast<int>(f);
                best_threshold = 0.5 * (xv + xn);
            }
        }
    }
    // Gains at rounding level are not real structure.
    double scale = 0.0;
    for (auto i : rows) scale += r(i) * r(i);
    if (best_feature < 0 || best_gain <= 1e-12 * scale) return id;

    std::vector<Eigen::Index> lrows, rrows;
    for (auto i : rows) {
        (x(i, best_feature) <= best_threshold ? lrows : rrows).push_back(i);
    }
    const int l = grow(x, r, lrows, depth + 1, max_depth, min_leaf);
    const int rr = grow(x, r, rrows, depth + 1, max_depth, min_leaf);
    Node& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = l;
    node.right = rr;
    return id;
}

double RegressionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    int k = 0;
    while (nodes_[static_cast<std::size_t>(k)].feature >= 0) {
        const Node& node = nodes_[static_cast<std::size_t>(k)];
        k = row(node.feature) <= node.threshold ? node.left : node.right;
    }
    return nodes_[static_cast<std::size_t>(k)].value;
}

GradientBoostedTrees GradientBoostedTrees::fit(const Matrix& x, const Vector& y,
                                               const TreeParams& params, const RngStream& rng) {
    params.validate();
    if (x.rows() != y.size() || x.rows() == 0) throw DimensionError("gbtree: x and y disagree");
    if (!x.allFinite() || !y.allFinite()) throw DomainError("gbtree: non-finite input");

    GradientBoostedTrees model;
    model.params_ = params;
    model.base_ = y.mean();
    const Eigen::Index n = x.rows();
    Vector fitted = Vector::Constant(n, model.base_);
    std::vector<Eigen::Index> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    const auto take = static_cast<std::size_t>(
        std::max<double>(1.0, std::ceil(params.subsample * static_cast<double>(n))));
    auto eng = rng.engine();

    model.trees_.reserve(static_cast<std::size_t>(params.n_trees));
    for (int t = 0; t < params.n_trees; ++t) {
        std::vector<Eigen::Index> rows = all;
        if (take < rows.size()) {
            std::shuffle(rows.begin(), rows.end(), eng);
            rows.resize(take);
            std::sort(rows.begin(), rows.end());
        }
        const Vector residual = y - fitted;
        RegressionTree tree = RegressionTree::fit(x, residual, rows, params.max_depth, params.min_leaf);
        for (Eigen::Index i = 0; i < n; ++i) {
            fitted(i) += params.learning_rate * tree.predict(x.row(i));
        }
        model.trees_.push_back(std::move(tree));
    }
    return model;
}

double GradientBoostedTrees::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    double v = base_;
    for (const auto& t : trees_) v += params_.learning_rate * t.predict(row);
    return v;
}

Vector GradientBoostedTrees::predict_all(const Matrix& x) const {
    Vector out(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) out(i) = predict(x.row(i));
    return out;
}

}  // namespace batchfx
