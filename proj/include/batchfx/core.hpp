#pragma once

// Data model, RNG streams and symmetric-matrix primitives shared by every
// other module.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace batchfx {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// A column (or variable) with no spread where one is required.
class DegenerateError : public std::runtime_error {
public:
    DegenerateError(const std::string& what, long index = -1)
        : std::runtime_error(what), index_(index) {}
    long index() const noexcept { return index_; }

private:
    long index_;
};

class NotPositiveDefiniteError : public std::runtime_error {
public:
    NotPositiveDefiniteError(const std::string& what, double eigenvalue)
        : std::runtime_error(what), eigenvalue_(eigenvalue) {}
    double eigenvalue() const noexcept { return eigenvalue_; }

private:
    double eigenvalue_;
};

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

/// Identifies one reproducible draw sequence. Streams are derived from a
/// master seed by hashing the (seed, stream id) pair, so any replicate can be
/// regenerated without replaying the ones before it.
class RngStream {
public:
    constexpr RngStream() = default;
    constexpr RngStream(std::uint64_t master_seed, std::uint64_t stream_id = 0)
        : master_seed_(master_seed), stream_id_(stream_id) {}

    std::uint64_t master_seed() const noexcept { return master_seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    /// Child stream `index`; children of distinct indices never collide with
    /// each other or with the parent in practice (64-bit mixed ids).
    RngStream substream(std::uint64_t index) const noexcept;

    /// A freshly seeded engine positioned at the start of this stream.
    std::mt19937_64 engine() const;

    friend bool operator==(const RngStream&, const RngStream&) = default;

private:
    std::uint64_t master_seed_ = 0;
    std::uint64_t stream_id_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

// ---------------------------------------------------------------------------
// Symmetric positive-definite matrices
// ---------------------------------------------------------------------------

/// Relative eigenvalue floor that defines "positive definite" everywhere.
inline constexpr double kEigenFloor = 1e-12;

/// A validated symmetric positive-definite matrix. Keeps its eigen
/// decomposition so square roots and inverses are cheap.
class SpdMatrix {
public:
    /// Throws DomainError if not symmetric (1e-10 relative) and
    /// NotPositiveDefiniteError if the smallest eigenvalue is not above
    /// kEigenFloor times the largest.
    explicit SpdMatrix(const Matrix& entries);

    static SpdMatrix identity(Eigen::Index p);

    const Matrix& entries() const noexcept { return entries_; }
    Eigen::Index size() const noexcept { return entries_.rows(); }
    double eigen_floor() const noexcept { return eigenvalues_(0); }
    const Vector& eigenvalues() const noexcept { return eigenvalues_; }
    const Matrix& eigenvectors() const noexcept { return eigenvectors_; }

    /// V f(diag) V^T for an elementwise function of the eigenvalues.
    Matrix spectral_map(const std::function<double(double)>& f) const;
    Matrix inverse() const;
    double log_det() const;

private:
    SpdMatrix() = default;
    Matrix entries_;
    Vector eigenvalues_;
    Matrix eigenvectors_;
};

SpdMatrix spd_sqrt(const SpdMatrix& s);
SpdMatrix spd_inv_sqrt(const SpdMatrix& s);

// ---------------------------------------------------------------------------
// Elementary matrix operations
// ---------------------------------------------------------------------------

struct Centered {
    Matrix values;
    Vector means;
};

Centered mean_center(const Matrix& x);

/// Per-column standardization, n-1 denominator. Throws DegenerateError naming
/// the first zero-variance column.
Matrix autoscale(const Matrix& x);

/// Column means and (n-1) standard deviations; the pieces of autoscale.
struct ColumnScale {
    Vector mean;
    Vector sd;
};
ColumnScale column_scale(const Matrix& x);

enum class Denominator { NMinusOne, N };

/// X^T X / (n-1) or X^T X / n for an already mean-centered X.
Matrix empirical_cov(const Matrix& centered, Denominator denominator);

/// (rho^|k-l|)_{k,l}; exact identity when rho == 0.
Matrix ar1_correlation(double rho, Eigen::Index p);

/// n i.i.d. rows from N(mu, sigma) as Z sigma^{1/2} + mu.
Matrix mvn_sample(const Vector& mu, const SpdMatrix& sigma, Eigen::Index n,
                  const RngStream& rng);

/// n rows Z * factor + mu where factor^T factor is the covariance.
Matrix mvn_sample_factor(const Vector& mu, const Matrix& factor, Eigen::Index n,
                         const RngStream& rng);

/// Standard normal n x p matrix, filled row by row.
Matrix standard_normal(Eigen::Index n, Eigen::Index p, const RngStream& rng);

double median(std::vector<double> values);

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

/// Worker count used by parallel_for when none is given. Reads
/// BATCHFX_THREADS, falling back to the hardware concurrency.
unsigned default_threads();
void set_default_threads(unsigned n);

/// Calls body(i) for i in [0, n). Each index is processed exactly once; the
/// caller writes results into slot i so the outcome never depends on the
/// schedule. The first exception thrown by any body is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  unsigned threads = 0);

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

enum class Role { QC, Subject };

std::string to_string(Role role);

/// Sample-by-feature intensities with per-sample metadata.
///
/// Invariants (checked on construction, DatasetError otherwise): all metadata
/// vectors have one entry per row; values finite; every batch has at least
/// two QC rows; injection orders are positive and strictly increasing with
/// row order inside each batch.
class BatchedDataset {
public:
    BatchedDataset(Matrix values, std::vector<std::string> sample_ids,
                   std::vector<std::string> batch, std::vector<Role> role,
                   std::vector<long long> injection_order,
                   std::vector<std::string> feature_names = {});

    const Matrix& values() const noexcept { return values_; }
    const std::vector<std::string>& sample_ids() const noexcept { return sample_ids_; }
    const std::vector<std::string>& batch() const noexcept { return batch_; }
    const std::vector<Role>& role() const noexcept { return role_; }
    const std::vector<long long>& injection_order() const noexcept { return order_; }
    const std::vector<std::string>& feature_names() const noexcept { return features_; }

    Eigen::Index n_samples() const noexcept { return values_.rows(); }
    Eigen::Index n_features() const noexcept { return values_.cols(); }

    /// Distinct batch labels in order of first appearance.
    const std::vector<std::string>& batches() const noexcept { return batch_labels_; }
    std::size_t batch_index(const std::string& label) const;

    /// Row indices of one batch, optionally restricted to a role.
    std::vector<Eigen::Index> rows(const std::string& batch) const;
    std::vector<Eigen::Index> rows(const std::string& batch, Role role) const;
    std::vector<Eigen::Index> rows(Role role) const;

    Matrix select(const std::vector<Eigen::Index>& rows) const;

    /// Same metadata, new values (re-validated).
    BatchedDataset with_values(Matrix values) const;

private:
    void validate();

    Matrix values_;
    std::vector<std::string> sample_ids_;
    std::vector<std::string> batch_;
    std::vector<Role> role_;
    std::vector<long long> order_;
    std::vector<std::string> features_;
    std::vector<std::string> batch_labels_;
};

Matrix select_rows(const Matrix& x, const std::vector<Eigen::Index>& rows);

}  // namespace batchfx
