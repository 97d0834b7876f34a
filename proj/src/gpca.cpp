#include "batchfx/gpca.hpp"

#include <algorithm>
#include <map>

namespace batchfx {

namespace {

double unguided_variance(const Matrix& x) {
    const double denom = static_cast<double>(x.rows() - 1);
    if (x.rows() <= x.cols()) {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(x * x.transpose(), Eigen::EigenvaluesOnly);
        return eig.eigenvalues().maxCoeff() / denom;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(x.transpose() * x, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().maxCoeff() / denom;
}

double guided_variance(const Matrix& x, const std::vector<int>& labels, int n_batches) {
    Matrix means = Matrix::Zero(n_batches, x.cols());
    std::vector<double> counts(static_cast<std::size_t>(n_batches), 0.0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        means.row(labels[static_cast<std::size_t>(i)]) += x.row(i);
        counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])] += 1.0;
    }
    for (int b = 0; b < n_batches; ++b) means.row(b) /= counts[static_cast<std::size_t>(b)];
    Eigen::SelfAdjointEigenSolver<Matrix> eig(means * means.transpose());
    const Vector a = eig.eigenvectors().col(n_batches - 1);
    Vector v = means.transpose() * a;
    const double norm = v.norm();
    if (!(norm > 1e-300)) return 0.0;
    v /= norm;
    return (x * v).squaredNorm() / static_cast<double>(x.rows() - 1);
}

}  // namespace

double gpca_delta(const Matrix& scaled, const std::vector<int>& labels, int n_batches) {
    const double vu = unguided_variance(scaled);
    return vu > 0.0 ? guided_variance(scaled, labels, n_batches) / vu : 0.0;
}

GpcaOutcome gpca_test(const Matrix& x, const std::vector<std::string>& batch, int n_perm,
                      const RngStream& rng, unsigned threads) {
    if (n_perm < 1) throw DomainError("gpca_test: n_perm must be >= 1");
    if (static_cast<Eigen::Index>(batch.size()) != x.rows()) {
        throw DimensionError("gpca_test: one batch label per row required");
    }
    std::map<std::string, int> index;
    std::vector<int> labels;
    labels.reserve(batch.size());
    for (const auto& b : batch) {
        auto [it, inserted] = index.try_emplace(b, static_cast<int>(index.size()));
        labels.push_back(it->second);
    }
    const int n_batches = static_cast<int>(index.size());
    if (n_batches < 2) throw DatasetError("gpca_test: need at least two batches");
    std::vector<int> counts(static_cast<std::size_t>(n_batches), 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    if (*std::min_element(counts.begin(), counts.end()) < 2) {
        throw DatasetError("gpca_test: every batch needs at least two samples");
    }

    const Matrix scaled = autoscale(x);
    const double vu = unguided_variance(scaled);
    const double observed = vu > 0.0 ? guided_variance(scaled, labels, n_batches) / vu : 0.0;

    std::vector<std::vector<int>> perms(static_cast<std::size_t>(n_perm), labels);
    auto eng = rng.engine();
    for (auto& perm : perms) std::shuffle(perm.begin(), perm.end(), eng);

    std::vector<char> exceeds(perms.size(), 0);
    parallel_for(
        perms.size(),
        [&](std::size_t k) {
            const double d = vu > 0.0 ? guided_variance(scaled, perms[k], n_batches) / vu : 0.0;
            // Ties within rounding count as exceeding.
            exceeds[k] = d >= observed * (1.0 - 1e-12) ? 1 : 0;
        },
        threads);
    const long count = std::count(exceeds.begin(), exceeds.end(), 1);
    GpcaOutcome out;
    out.delta = observed;
    out.n_perm = n_perm;
    out.p_value = static_cast<double>(1 + count) / static_cast<double>(n_perm + 1);
    return out;
}

}  // namespace batchfx
