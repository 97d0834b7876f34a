#include "batchfx/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace batchfx {

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

RngStream RngStream::substream(std::uint64_t index) const noexcept {
    return RngStream(master_seed_, splitmix64(stream_id_ ^ splitmix64(index + 0x632be59bd9b4e019ULL)));
}

std::mt19937_64 RngStream::engine() const {
    const std::uint64_t a = splitmix64(master_seed_);
    const std::uint64_t b = splitmix64(stream_id_ ^ 0xd1b54a32d192ed03ULL);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

// ---------------------------------------------------------------------------

SpdMatrix::SpdMatrix(const Matrix& entries) {
    if (entries.rows() != entries.cols() || entries.rows() == 0) {
        throw DimensionError("SpdMatrix: expected a non-empty square matrix");
    }
    if (!entries.allFinite()) throw DomainError("SpdMatrix: non-finite entries");
    const double scale = std::max(entries.cwiseAbs().maxCoeff(), 1e-300);
    const double asym = (entries - entries.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * scale) {
        throw DomainError("SpdMatrix: matrix is not symmetric");
    }
    entries_ = 0.5 * (entries + entries.transpose());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(entries_);
    if (eig.info() != Eigen::Success) {
        throw NotPositiveDefiniteError("SpdMatrix: eigendecomposition failed", 0.0);
    }
    eigenvalues_ = eig.eigenvalues();
    eigenvectors_ = eig.eigenvectors();
    const double top = eigenvalues_(eigenvalues_.size() - 1);
    const double low = eigenvalues_(0);
    if (!(top > 0.0) || low <= kEigenFloor * top) {
        std::ostringstream msg;
        msg << "matrix is not positive definite (smallest eigenvalue " << low << ", largest "
            << top << ")";
        throw NotPositiveDefiniteError(msg.str(), low);
    }
}

SpdMatrix SpdMatrix::identity(Eigen::Index p) { return SpdMatrix(Matrix::Identity(p, p)); }

Matrix SpdMatrix::spectral_map(const std::function<double(double)>& f) const {
    Vector mapped = eigenvalues_.unaryExpr(f);
    Matrix out = eigenvectors_ * mapped.asDiagonal() * eigenvectors_.transpose();
    return 0.5 * (out + out.transpose());
}

Matrix SpdMatrix::inverse() const {
    return spectral_map([](double v) { return 1.0 / v; });
}

double SpdMatrix::log_det() const { return eigenvalues_.array().log().sum(); }

SpdMatrix spd_sqrt(const SpdMatrix& s) {
    return SpdMatrix(s.spectral_map([](double v) { return std::sqrt(v); }));
}

SpdMatrix spd_inv_sqrt(const SpdMatrix& s) {
    return SpdMatrix(s.spectral_map([](double v) { return 1.0 / std::sqrt(v); }));
}

// ---------------------------------------------------------------------------

Centered mean_center(const Matrix& x) {
    if (x.rows() == 0 || x.cols() == 0) throw DimensionError("mean_center: empty matrix");
    Vector means = x.colwise().mean().transpose();
    Matrix centered = x.rowwise() - means.transpose();
    return {std::move(centered), std::move(means)};
}

ColumnScale column_scale(const Matrix& x) {
    if (x.rows() < 2 || x.cols() == 0) {
        throw DimensionError("autoscale: need at least two rows and one column");
    }
    Vector mean = x.colwise().mean().transpose();
    Vector sd(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double ss = (x.col(j).array() - mean(j)).square().sum();
        sd(j) = std::sqrt(ss / static_cast<double>(x.rows() - 1));
        if (!(sd(j) > 1e-14 * std::max(1.0, std::abs(mean(j))))) {
            throw DegenerateError("zero-variance column " + std::to_string(j), j);
        }
    }
    return {std::move(mean), std::move(sd)};
}

Matrix autoscale(const Matrix& x) {
    const ColumnScale cs = column_scale(x);
    Matrix out = (x.rowwise() - cs.mean.transpose()).array().rowwise() / cs.sd.transpose().array();
    return out;
}

Matrix empirical_cov(const Matrix& centered, Denominator denominator) {
    const Eigen::Index n = centered.rows();
    if (n == 0) throw DimensionError("empirical_cov: empty matrix");
    if (denominator == Denominator::NMinusOne && n < 2) {
        throw DimensionError("empirical_cov: n-1 denominator needs n >= 2");
    }
    for (Eigen::Index j = 0; j < centered.cols(); ++j) {
        const double scale = std::max(1.0, centered.col(j).cwiseAbs().maxCoeff());
        if (std::abs(centered.col(j).mean()) > 1e-8 * scale) {
            throw ContractError("empirical_cov: column " + std::to_string(j) +
                                " is not mean-centered");
        }
    }
    const double denom = denominator == Denominator::N ? static_cast<double>(n)
                                                       : static_cast<double>(n - 1);
    Matrix cov = (centered.transpose() * centered) / denom;
    return 0.5 * (cov + cov.transpose());
}

Matrix ar1_correlation(double rho, Eigen::Index p) {
    if (!(std::abs(rho) <= 1.0)) throw DomainError("ar1_correlation: |rho| must be <= 1");
    if (p < 1) throw DimensionError("ar1_correlation: p must be >= 1");
    Matrix r = Matrix::Identity(p, p);
    if (rho == 0.0) return r;
    for (Eigen::Index k = 0; k < p; ++k) {
        for (Eigen::Index l = k + 1; l < p; ++l) {
            const double v = std::pow(rho, static_cast<double>(l - k));
            r(k, l) = v;
            r(l, k) = v;
        }
    }
    return r;
}

Matrix standard_normal(Eigen::Index n, Eigen::Index p, const RngStream& rng) {
    auto eng = rng.engine();
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix z(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) z(i, j) = normal(eng);
    }
    return z;
}

Matrix mvn_sample_factor(const Vector& mu, const Matrix& factor, Eigen::Index n,
                         const RngStream& rng) {
    if (n < 1) throw DimensionError("mvn_sample: n must be >= 1");
    if (factor.rows() != mu.size() || factor.cols() != mu.size()) {
        throw DimensionError("mvn_sample: mean/covariance dimension mismatch");
    }
    Matrix x = standard_normal(n, mu.size(), rng) * factor;
    x.rowwise() += mu.transpose();
    return x;
}

Matrix mvn_sample(const Vector& mu, const SpdMatrix& sigma, Eigen::Index n,
                  const RngStream& rng) {
    return mvn_sample_factor(mu, spd_sqrt(sigma).entries(), n, rng);
}

double median(std::vector<double> values) {
    if (values.empty()) throw DimensionError("median of an empty set");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<long>(mid), values.end());
    double hi = values[mid];
    if (values.size() % 2 == 1) return hi;
    const double lo = *std::max_element(values.begin(), values.begin() + static_cast<long>(mid));
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------

namespace {
std::atomic<unsigned> g_threads{0};
}

unsigned default_threads() {
    if (unsigned t = g_threads.load(); t > 0) return t;
    if (const char* env = std::getenv("BATCHFX_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void set_default_threads(unsigned n) { g_threads.store(n); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                  unsigned threads) {
    if (n == 0) return;
    if (threads == 0) threads = default_threads();
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                next.store(n);
                return;
            }
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    pool.clear();
    if (failure) std::rethrow_exception(failure);
}

// ---------------------------------------------------------------------------

std::string to_string(Role role) { return role == Role::QC ? "QC" : "subject"; }

BatchedDataset::BatchedDataset(Matrix values, std::vector<std::string> sample_ids,
                               std::vector<std::string> batch, std::vector<Role> role,
                               std::vector<long long> injection_order,
                               std::vector<std::string> feature_names)
    : values_(std::move(values)),
      sample_ids_(std::move(sample_ids)),
      batch_(std::move(batch)),
      role_(std::move(role)),
      order_(std::move(injection_order)),
      features_(std::move(feature_names)) {
    validate();
}

void BatchedDataset::validate() {
    const auto n = static_cast<std::size_t>(values_.rows());
    if (n == 0 || values_.cols() == 0) throw DatasetError("dataset is empty");
    if (sample_ids_.size() != n || batch_.size() != n || role_.size() != n || order_.size() != n) {
        throw DatasetError("metadata length does not match the number of rows");
    }
    if (features_.empty()) {
        for (Eigen::Index j = 0; j < values_.cols(); ++j) features_.push_back("V" + std::to_string(j + 1));
    }
    if (features_.size() != static_cast<std::size_t>(values_.cols())) {
        throw DatasetError("feature name count does not match the number of columns");
    }
    for (Eigen::Index i = 0; i < values_.rows(); ++i) {
        for (Eigen::Index j = 0; j < values_.cols(); ++j) {
            if (!std::isfinite(values_(i, j))) {
                throw DatasetError("non-finite value at row " + std::to_string(i) + ", column " +
                                   std::to_string(j));
            }
        }
    }
    batch_labels_.clear();
    std::unordered_map<std::string, long long> last_order;
    std::unordered_map<std::string, int> qc_count;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& b = batch_[i];
        if (!last_order.contains(b)) {
            batch_labels_.push_back(b);
            last_order[b] = 0;
            qc_count[b] = 0;
        }
        if (order_[i] <= 0) {
            throw DatasetError("injection order must be positive (row " + std::to_string(i) + ")");
        }
        if (order_[i] <= last_order[b]) {
            throw DatasetError("injection order not strictly increasing within batch '" + b +
                               "' at row " + std::to_string(i));
        }
        last_order[b] = order_[i];
        if (role_[i] == Role::QC) ++qc_count[b];
    }
    for (const auto& b : batch_labels_) {
        if (qc_count[b] < 2) throw DatasetError("batch '" + b + "' has fewer than 2 QC samples");
    }
}

std::size_t BatchedDataset::batch_index(const std::string& label) const {
    auto it = std::find(batch_labels_.begin(), batch_labels_.end(), label);
    if (it == batch_labels_.end()) throw DatasetError("unknown batch '" + label + "'");
    return static_cast<std::size_t>(it - batch_labels_.begin());
}

std::vector<Eigen::Index> BatchedDataset::rows(const std::string& b) const {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < batch_.size(); ++i) {
        if (batch_[i] == b) out.push_back(static_cast<Eigen::Index>(i));
    }
    return out;
}

std::vector<Eigen::Index> BatchedDataset::rows(const std::string& b, Role r) const {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < batch_.size(); ++i) {
        if (batch_[i] == b && role_[i] == r) out.push_back(static_cast<Eigen::Index>(i));
    }
    return out;
}

std::vector<Eigen::Index> BatchedDataset::rows(Role r) const {
    std::vector<Eigen::Index> out;
    for (std::size_t i = 0; i < role_.size(); ++i) {
        if (role_[i] == r) out.push_back(static_cast<Eigen::Index>(i));
    }
    return out;
}

Matrix select_rows(const Matrix& x, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = x.row(rows[k]);
    return out;
}

Matrix BatchedDataset::select(const std::vector<Eigen::Index>& r) const { return select_rows(values_, r); }

BatchedDataset BatchedDataset::with_values(Matrix values) const {
    if (values.rows() != values_.rows() || values.cols() != values_.cols()) {
        throw DimensionError("with_values: shape mismatch");
    }
    return BatchedDataset(std::move(values), sample_ids_, batch_, role_, order_, features_);
}

}  // namespace batchfx
