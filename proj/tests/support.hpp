#pragma once

// Small fixtures shared by the unit tests.

#include "batchfx/core.hpp"

#include <random>
#include <string>
#include <vector>

namespace testsupport {

using batchfx::Matrix;
using batchfx::Vector;

inline Matrix random_matrix(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
    return batchfx::standard_normal(n, p, batchfx::RngStream(seed, 77));
}

// M M^T + shift I
inline Matrix random_spd(Eigen::Index p, std::uint64_t seed, double shift = 1.0) {
    const Matrix m = random_matrix(p, p, seed);
    return m * m.transpose() + shift * Matrix::Identity(p, p);
}

inline double rel_err(const Matrix& a, const Matrix& b) {
    return (a - b).norm() / std::max(1.0, b.norm());
}

// Rows grouped by batch: qc[j] QC rows followed by subj[j] subject rows.
inline batchfx::BatchedDataset make_dataset(const Matrix& values, const std::vector<int>& qc,
                                            const std::vector<int>& subj) {
    std::vector<std::string> ids, batch;
    std::vector<batchfx::Role> role;
    std::vector<long long> order;
    for (std::size_t j = 0; j < qc.size(); ++j) {
        long long k = 1;
        for (int i = 0; i < qc[j] + subj[j]; ++i) {
            ids.push_back("s" + std::to_string(ids.size()));
            batch.push_back("B" + std::to_string(j + 1));
            role.push_back(i < qc[j] ? batchfx::Role::QC : batchfx::Role::Subject);
            order.push_back(k++);
        }
    }
    return batchfx::BatchedDataset(values, ids, batch, role, order);
}

}  // namespace testsupport
