#include "batchfx/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace batchfx {

namespace {

Vector variance(const Matrix& x) {
    const Centered c = mean_center(x);
    return c.values.colwise().squaredNorm().transpose() / static_cast<double>(x.rows() - 1);
}

Vector rsd_of(const Matrix& qc) {
    if (qc.rows() < 2) throw DatasetError("rsd: need at least two QC rows");
    const Vector mean = qc.colwise().mean().transpose();
    const Vector var = variance(qc);
    Vector out(qc.cols());
    for (Eigen::Index i = 0; i < qc.cols(); ++i) {
        if (mean(i) == 0.0) {
            throw DegenerateError("rsd: QC mean of variable " + std::to_string(i) + " is zero", i);
        }
        out(i) = std::sqrt(var(i)) / mean(i);
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

}  // namespace

Vector rsd(const BatchedDataset& dataset) { return rsd_of(dataset.select(dataset.rows(Role::QC))); }

Vector rsd(const BatchedDataset& dataset, const std::string& batch) {
    return rsd_of(dataset.select(dataset.rows(batch, Role::QC)));
}

Vector d_ratio(const BatchedDataset& dataset) {
    const auto qc = dataset.rows(Role::QC);
    const auto ss = dataset.rows(Role::Subject);
    if (qc.size() < 2 || ss.size() < 2) {
        throw DatasetError("d_ratio: need at least two QC and two subject rows");
    }
    const Vector vq = variance(dataset.select(qc));
    const Vector vs = variance(dataset.select(ss));
    Vector out(vq.size());
    for (Eigen::Index i = 0; i < vq.size(); ++i) {
        const double total = vq(i) + vs(i);
        if (!(total > 0.0)) {
            throw DegenerateError("d_ratio: variable " + std::to_string(i) + " has no variance", i);
        }
        out(i) = std::sqrt(vq(i) / total);
    }
    return out;
}

std::vector<double> cumulative_frequency(std::span<const double> values,
                                         std::span<const double> thresholds) {
    if (values.empty()) throw DimensionError("cumulative_frequency: no values");
    if (!std::is_sorted(thresholds.begin(), thresholds.end())) {
        throw DomainError("cumulative_frequency: thresholds must be ascending");
    }
    std::vector<double> out;
    for (double t : thresholds) {
        const auto below = std::count_if(values.begin(), values.end(), [t](double v) { return v < t; });
        out.push_back(100.0 * static_cast<double>(below) / static_cast<double>(values.size()));
    }
    return out;
}

double MetricTable::median_rsd() const {
    return median(std::vector<double>(rsd.data(), rsd.data() + rsd.size()));
}

MetricTable metric_table(const BatchedDataset& dataset) {
    MetricTable t;
    t.features = dataset.feature_names();
    t.rsd = rsd(dataset);
    t.rsd_thresholds = kRsdThresholds;
    t.rsd_cf = cumulative_frequency(std::span<const double>(t.rsd.data(), static_cast<std::size_t>(t.rsd.size())),
                                    t.rsd_thresholds);
    if (dataset.rows(Role::Subject).size() >= 2) {
        t.d_ratio = d_ratio(dataset);
        t.d_ratio_thresholds = kDRatioThresholds;
        t.d_ratio_cf = cumulative_frequency(
            std::span<const double>(t.d_ratio.data(), static_cast<std::size_t>(t.d_ratio.size())),
            t.d_ratio_thresholds);
    }
    t.batches = dataset.batches();
    t.rsd_by_batch.resize(static_cast<Eigen::Index>(t.batches.size()), dataset.n_features());
    for (std::size_t b = 0; b < t.batches.size(); ++b) {
        t.rsd_by_batch.row(static_cast<Eigen::Index>(b)) = rsd(dataset, t.batches[b]).transpose();
    }
    return t;
}

std::string format_cf_row(const MetricTable& table) {
    std::string out;
    for (std::size_t k = 0; k < table.rsd_cf.size(); ++k) {
        if (k) out += ' ';
        out += fmt(table.rsd_cf[k]);
    }
    out += " |";
    for (double v : table.d_ratio_cf) out += ' ' + fmt(v);
    return out;
}

}  // namespace batchfx
