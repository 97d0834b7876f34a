#pragma once

// Guided-PCA permutation test for batch structure.

#include "batchfx/core.hpp"

#include <string>
#include <vector>

namespace batchfx {

struct GpcaOutcome {
    double delta = 0.0;  ///< guided / unguided leading-component variance
    double p_value = 1.0;
    int n_perm = 0;
};

/// Variance ratio for fixed labels on an already autoscaled matrix. `labels`
/// are batch indices in [0, n_batches).
double gpca_delta(const Matrix& scaled, const std::vector<int>& labels, int n_batches);

/// Autoscale X, compute delta, and compare it with n_perm label
/// permutations drawn up front from `rng`. p = (1 + #{perm >= obs}) / (n_perm + 1).
GpcaOutcome gpca_test(const Matrix& x, const std::vector<std::string>& batch, int n_perm,
                      const RngStream& rng, unsigned threads = 1);

}  // namespace batchfx
