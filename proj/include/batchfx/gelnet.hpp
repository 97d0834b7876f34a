#pragma once

// Graphical elastic net: penalized precision-matrix estimation
//
//   min_Theta  -log|Theta| + tr(S Theta)
//              + lambda (alpha |Theta - T|_1 + (1 - alpha)/2 |Theta - T|_F^2)
//
// alpha = 1 is the graphical lasso, alpha = 0 the graphical ridge.

#include "batchfx/core.hpp"

#include <optional>
#include <vector>

namespace batchfx {

struct GelnetConfig {
    double alpha = 0.5;
    double lambda = 1.0;
    Matrix target;  ///< empty means the identity
    double tol = 1e-6;
    int max_iter = 500;

    /// Target as a p x p matrix (identity when none was set).
    Matrix target_or_identity(Eigen::Index p) const;
    /// Throws DomainError / DimensionError on invalid settings.
    void validate(Eigen::Index p) const;
};

struct PrecisionEstimate {
    SpdMatrix theta;
    GelnetConfig config;
    double objective = 0.0;
    int iterations = 0;
    double kkt_residual = 0.0;
    std::vector<double> objective_trace;  ///< objective after every accepted step, start included
};

class NonConvergenceError : public std::runtime_error {
public:
    NonConvergenceError(const std::string& what, Matrix last, double residual, int iterations)
        : std::runtime_error(what),
          last_(std::move(last)),
          residual_(residual),
          iterations_(iterations) {}
    const Matrix& last_iterate() const noexcept { return last_; }
    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    Matrix last_;
    double residual_;
    int iterations_;
};

double gelnet_objective(const SpdMatrix& theta, const Matrix& s, const GelnetConfig& config);

/// Same, for a plain matrix; DomainError when theta is not positive definite.
double gelnet_objective(const Matrix& theta, const Matrix& s, const GelnetConfig& config);

/// Largest violation of the subgradient optimality conditions at theta.
double gelnet_kkt_residual(const Matrix& theta, const Matrix& s, const GelnetConfig& config);

/// Exact graphical-ridge solution for the target tau * I.
PrecisionEstimate ridge_closed_form(const Matrix& s, double lambda, double tau);

/// Proximal Newton with coordinate descent on each quadratic model and a
/// backtracking line search that keeps every iterate positive definite.
PrecisionEstimate gelnet_estimate(const Matrix& s, const GelnetConfig& config);

}  // namespace batchfx
